use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use phaseid::circuit::{sample_voltages_with, CircuitSpec, CouplingMode, PhaseLabel};
use phaseid::exec::Exec;
use phaseid::selection::{check_loewner_lemma_with, cosine_kernel, select_exhaustive_with, select_greedy_with};
use phaseid::SymMatrix;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn kernel(n: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
    cosine_kernel(x.view()).unwrap()
}

fn selection(c: &mut Criterion) {
    let k = kernel(16, 1);
    let mut g = c.benchmark_group("exhaustive_16_choose_4");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| select_exhaustive_with(black_box(&k), 4, exec)));
    }
    g.finish();

    let k = kernel(60, 2);
    let mut g = c.benchmark_group("greedy_60_m6");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| select_greedy_with(black_box(&k), 6, exec)));
    }
    g.finish();

    let k = kernel(10, 3);
    let mut g = c.benchmark_group("loewner_10_m3");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| check_loewner_lemma_with(black_box(&k), 3, exec)));
    }
    g.finish();
}

fn synthesis(c: &mut Criterion) {
    let spec = CircuitSpec {
        n_customers: 300,
        delta_e: 0.001,
        z_mag: 0.001,
        sigma: 0.2,
        phase_mix: vec![(PhaseLabel::A, 0.5), (PhaseLabel::B, 0.3), (PhaseLabel::C, 0.2)],
        coupling_mode: CouplingMode::Physical,
        seed: 4,
    };
    let mut g = c.benchmark_group("sample_300x168");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| sample_voltages_with(black_box(&spec), 168, exec)));
    }
    g.finish();
}

criterion_group!(benches, selection, synthesis);
criterion_main!(benches);
