//! Synthetic radial feeders under the linearised voltage-magnitude model.
//!
//! Customer `k` (1-based, ordered by electrical distance from the substation)
//! sees `v_k = g_k - |z| Δ_E Σ_{j≤k} c_kj · j · I_j`, where `I_j` is the current
//! magnitude drawn by customer `j` and `c_kj` couples the two service phases.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::exec::Exec;
use crate::numerics::SymMatrix;

const INV_SQRT3: f64 = 0.577_350_269_189_625_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("phase {0} has no raw injection vector (three-phase loads are excluded)")]
    UnsupportedLabel(PhaseLabel),
    #[error("unknown phase label {0:?}")]
    UnknownLabel(String),
    #[error("invalid circuit spec: {0}")]
    InvalidSpec(String),
}

/// Phase connection type of a customer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseLabel {
    A,
    B,
    C,
    AB,
    BC,
    CA,
    ABC,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 7] = [
        PhaseLabel::A,
        PhaseLabel::B,
        PhaseLabel::C,
        PhaseLabel::AB,
        PhaseLabel::BC,
        PhaseLabel::CA,
        PhaseLabel::ABC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::A => "A",
            PhaseLabel::B => "B",
            PhaseLabel::C => "C",
            PhaseLabel::AB => "AB",
            PhaseLabel::BC => "BC",
            PhaseLabel::CA => "CA",
            PhaseLabel::ABC => "ABC",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_two_phase(self) -> bool {
        matches!(self, PhaseLabel::AB | PhaseLabel::BC | PhaseLabel::CA)
    }

    /// Nominal magnitude `g`: 1 for single phase, √3 otherwise.
    pub fn nominal_voltage(self) -> f64 {
        match self {
            PhaseLabel::A | PhaseLabel::B | PhaseLabel::C => 1.0,
            _ => 3f64.sqrt(),
        }
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseLabel {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PhaseLabel::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| CircuitError::UnknownLabel(s.to_string()))
    }
}

/// Components on the (A, B, C, n) conductors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiVector(pub [f64; 4]);

impl PhiVector {
    pub fn dot(&self, other: &PhiVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Raw phasor injection direction. Three-phase customers have none.
pub fn phase_vector(label: PhaseLabel) -> Result<PhiVector, CircuitError> {
    let v = match label {
        PhaseLabel::A => [1.0, 0.0, 0.0, -1.0],
        PhaseLabel::B => [0.0, 1.0, 0.0, -1.0],
        PhaseLabel::C => [0.0, 0.0, 1.0, -1.0],
        PhaseLabel::AB => [1.0, -1.0, 0.0, 0.0],
        PhaseLabel::BC => [0.0, 1.0, -1.0, 0.0],
        PhaseLabel::CA => [-1.0, 0.0, 1.0, 0.0],
        PhaseLabel::ABC => return Err(CircuitError::UnsupportedLabel(label)),
    };
    Ok(PhiVector(v))
}

/// Magnitude-model direction. `ABC` is treated as an equal mix of the three
/// line conductors.
pub fn magnitude_phase_vector(label: PhaseLabel) -> PhiVector {
    let r = INV_SQRT3;
    PhiVector(match label {
        PhaseLabel::A => [1.0, 0.0, 0.0, 0.0],
        PhaseLabel::B => [0.0, 1.0, 0.0, 0.0],
        PhaseLabel::C => [0.0, 0.0, 1.0, 0.0],
        PhaseLabel::AB => [r, -r, 0.0, 0.0],
        PhaseLabel::BC => [0.0, r, -r, 0.0],
        PhaseLabel::CA => [-r, 0.0, r, 0.0],
        PhaseLabel::ABC => [r, r, r, 0.0],
    })
}

/// How the coupling coefficients `c_kj` are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingMode {
    /// Inner products of the magnitude-model phase vectors.
    #[default]
    Physical,
    /// Random coefficients inside the stated ranges: diagonal in `[1, 2/√3]`,
    /// off-diagonal magnitude in `[1/√3, 2/√3]`.
    BoundConsistent,
}

impl fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingMode::Physical => "physical",
            CouplingMode::BoundConsistent => "bound_consistent",
        })
    }
}

impl FromStr for CouplingMode {
    type Err = CircuitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "physical" => Ok(CouplingMode::Physical),
            "bound_consistent" => Ok(CouplingMode::BoundConsistent),
            other => Err(CircuitError::InvalidSpec(format!("unknown coupling mode {other:?}"))),
        }
    }
}

/// Lower-triangular coupling matrix `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix(pub Array2<f64>);

impl CouplingMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.0[[k, j]]
    }
}

pub fn build_coupling_matrix(labels: &[PhaseLabel], mode: CouplingMode, seed: u64) -> CouplingMatrix {
    let n = labels.len();
    let mut c = Array2::<f64>::zeros((n, n));
    match mode {
        CouplingMode::Physical => {
            let phis: Vec<PhiVector> = labels.iter().map(|&l| magnitude_phase_vector(l)).collect();
            for k in 0..n {
                for j in 0..=k {
                    c[[k, j]] = phis[k].dot(&phis[j]);
                }
            }
        }
        CouplingMode::BoundConsistent => {
            let mut rng = stream_rng(seed, COUPLING_STREAM);
            let (lo, hi) = (INV_SQRT3, 2.0 * INV_SQRT3);
            for k in 0..n {
                for j in 0..k {
                    let mag = rng.gen_range(lo..=hi);
                    c[[k, j]] = if rng.gen::<bool>() { mag } else { -mag };
                }
                c[[k, k]] = rng.gen_range(1.0..=hi);
            }
        }
    }
    CouplingMatrix(c)
}

/// Parameters of a synthetic feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    pub n_customers: usize,
    pub delta_e: f64,
    pub z_mag: f64,
    pub sigma: f64,
    pub phase_mix: Vec<(PhaseLabel, f64)>,
    pub coupling_mode: CouplingMode,
    pub seed: u64,
}

impl CircuitSpec {
    pub fn validate(&self) -> Result<(), CircuitError> {
        let bad = |m: &str| Err(CircuitError::InvalidSpec(m.to_string()));
        if self.n_customers < 2 {
            return bad("n_customers must be at least 2");
        }
        if !(self.delta_e > 0.0 && self.z_mag > 0.0 && self.sigma > 0.0) {
            return bad("delta_e, z_mag and sigma must be positive");
        }
        if self.phase_mix.is_empty() || self.phase_mix.iter().any(|(_, p)| !(*p >= 0.0)) {
            return bad("phase_mix must be a non-empty list of non-negative probabilities");
        }
        let total: f64 = self.phase_mix.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad("phase_mix probabilities must sum to 1");
        }
        Ok(())
    }

    /// `α = |z|² Δ_E² σ²`.
    pub fn alpha(&self) -> f64 {
        (self.z_mag * self.delta_e * self.sigma).powi(2)
    }

    /// Phases in the mix with positive probability, in canonical order.
    pub fn phase_set(&self) -> Vec<PhaseLabel> {
        let mut out: Vec<PhaseLabel> =
            self.phase_mix.iter().filter(|(_, p)| *p > 0.0).map(|(l, _)| *l).collect();
        out.sort();
        out.dedup();
        out
    }

    /// i.i.d. labels from the phase mix.
    pub fn draw_labels(&self) -> Vec<PhaseLabel> {
        let mut rng = stream_rng(self.seed, LABEL_STREAM);
        (0..self.n_customers)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for &(label, p) in &self.phase_mix {
                    acc += p;
                    if u < acc {
                        return label;
                    }
                }
                self.phase_mix.iter().rev().find(|(_, p)| *p > 0.0).map(|(l, _)| *l).unwrap()
            })
            .collect()
    }
}

/// Voltage magnitudes, one row per customer and one column per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageDataset {
    pub voltages: Array2<f64>,
    pub labels: Option<Vec<PhaseLabel>>,
}

impl VoltageDataset {
    pub fn new(voltages: Array2<f64>, labels: Option<Vec<PhaseLabel>>) -> Result<Self, CircuitError> {
        if voltages.iter().any(|v| !v.is_finite()) {
            return Err(CircuitError::InvalidSpec("voltages must be finite".into()));
        }
        if let Some(l) = &labels {
            if l.len() != voltages.nrows() {
                return Err(CircuitError::InvalidSpec(format!(
                    "{} labels for {} customers",
                    l.len(),
                    voltages.nrows()
                )));
            }
        }
        Ok(Self { voltages, labels })
    }

    pub fn n_customers(&self) -> usize {
        self.voltages.nrows()
    }

    pub fn n_timesteps(&self) -> usize {
        self.voltages.ncols()
    }
}

const LABEL_STREAM: u64 = 0;
const COUPLING_STREAM: u64 = 1;
const CURRENT_STREAM_BASE: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Coupling matrix for `spec` given its drawn labels.
pub fn coupling_for(spec: &CircuitSpec, labels: &[PhaseLabel]) -> CouplingMatrix {
    build_coupling_matrix(labels, spec.coupling_mode, spec.seed)
}

pub fn sample_voltages(spec: &CircuitSpec, n_timesteps: usize) -> Result<VoltageDataset, CircuitError> {
    sample_voltages_with(spec, n_timesteps, Exec::default())
}

/// Draws `n_timesteps` i.i.d. snapshots. Currents are `Normal(1, σ)` and each
/// timestep has its own RNG stream, so the result does not depend on `exec`.
pub fn sample_voltages_with(
    spec: &CircuitSpec,
    n_timesteps: usize,
    exec: Exec,
) -> Result<VoltageDataset, CircuitError> {
    spec.validate()?;
    let labels = spec.draw_labels();
    let coupling = coupling_for(spec, &labels);
    let n = spec.n_customers;
    let g: Array1<f64> = labels.iter().map(|l| l.nominal_voltage()).collect();
    let scale = spec.z_mag * spec.delta_e;
    let normal = Normal::new(1.0, spec.sigma).map_err(|e| CircuitError::InvalidSpec(e.to_string()))?;
    let c = &coupling.0;

    let columns = exec.map_range(n_timesteps, |t| {
        let mut rng = stream_rng(spec.seed, CURRENT_STREAM_BASE + t as u64);
        // J·I with J = diag(1..N)
        let ji: Vec<f64> = (0..n).map(|j| (j + 1) as f64 * normal.sample(&mut rng)).collect();
        (0..n)
            .map(|k| {
                let row = c.row(k);
                let drop: f64 = (0..=k).map(|j| row[j] * ji[j]).sum();
                g[k] - scale * drop
            })
            .collect::<Vec<f64>>()
    });
    let mut voltages = Array2::<f64>::zeros((n, n_timesteps));
    for (t, col) in columns.into_iter().enumerate() {
        for (k, v) in col.into_iter().enumerate() {
            voltages[[k, t]] = v;
        }
    }
    VoltageDataset::new(voltages, Some(labels))
}

/// `Σ = α (CJ)(CJ)ᵀ`.
pub fn theoretical_covariance(spec: &CircuitSpec, coupling: &CouplingMatrix) -> SymMatrix {
    let n = coupling.dim();
    let cj = Array2::from_shape_fn((n, n), |(k, j)| coupling.get(k, j) * (j + 1) as f64);
    let sigma = cj.dot(&cj.t()) * spec.alpha();
    SymMatrix::symmetrized(sigma).expect("square")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    fn spec(n: usize, mix: Vec<(PhaseLabel, f64)>, seed: u64) -> CircuitSpec {
        CircuitSpec {
            n_customers: n,
            delta_e: 0.01,
            z_mag: 0.5,
            sigma: 0.2,
            phase_mix: mix,
            coupling_mode: CouplingMode::Physical,
            seed,
        }
    }

    #[test]
    fn raw_phase_vectors() {
        assert_eq!(phase_vector(PhaseLabel::A).unwrap().0, [1.0, 0.0, 0.0, -1.0]);
        assert_eq!(phase_vector(PhaseLabel::AB).unwrap().0, [1.0, -1.0, 0.0, 0.0]);
        assert_eq!(phase_vector(PhaseLabel::CA).unwrap().0, [-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(phase_vector(PhaseLabel::ABC), Err(CircuitError::UnsupportedLabel(PhaseLabel::ABC)));
    }

    #[test]
    fn magnitude_vectors() {
        let a = magnitude_phase_vector(PhaseLabel::A);
        let ab = magnitude_phase_vector(PhaseLabel::AB);
        assert_eq!(a.0, [1.0, 0.0, 0.0, 0.0]);
        assert!((ab.0[0] - 1.0 / 3f64.sqrt()).abs() < 1e-16);
        assert!((ab.0[1] + 1.0 / 3f64.sqrt()).abs() < 1e-16);
        assert!((a.dot(&ab) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        for l in PhaseLabel::ALL {
            let n = magnitude_phase_vector(l).norm();
            assert!(n >= (2.0f64 / 3.0).sqrt() - 1e-12 && n <= 1.0 + 1e-12, "{l}: {n}");
        }
    }

    #[test]
    fn label_round_trip_and_unknown() {
        for l in PhaseLabel::ALL {
            assert_eq!(l.as_str().parse::<PhaseLabel>().unwrap(), l);
        }
        assert!(matches!("D".parse::<PhaseLabel>(), Err(CircuitError::UnknownLabel(_))));
    }

    #[test]
    fn physical_coupling() {
        use PhaseLabel::*;
        assert_eq!(build_coupling_matrix(&[A, A], CouplingMode::Physical, 0).0, array![[1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(build_coupling_matrix(&[A, B], CouplingMode::Physical, 0).0, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn bound_consistent_ranges() {
        let labels = vec![PhaseLabel::A; 40];
        let c = build_coupling_matrix(&labels, CouplingMode::BoundConsistent, 3);
        let (lo, hi) = (1.0 / 3f64.sqrt(), 2.0 / 3f64.sqrt());
        for k in 0..40 {
            assert!(c.get(k, k) >= 1.0 && c.get(k, k) <= hi);
            for j in 0..k {
                assert!(c.get(k, j).abs() >= lo && c.get(k, j).abs() <= hi);
            }
            for j in (k + 1)..40 {
                assert_eq!(c.get(k, j), 0.0);
            }
        }
    }

    #[test]
    fn zero_noise_limit() {
        let mut s = spec(6, vec![(PhaseLabel::A, 0.5), (PhaseLabel::AB, 0.5)], 4);
        s.sigma = 1e-12;
        let ds = sample_voltages(&s, 5).unwrap();
        let labels = ds.labels.clone().unwrap();
        let c = coupling_for(&s, &labels);
        for k in 0..6 {
            let drop: f64 = (0..=k).map(|j| c.get(k, j) * (j + 1) as f64).sum();
            let expected = labels[k].nominal_voltage() - s.z_mag * s.delta_e * drop;
            for t in 0..5 {
                assert!((ds.voltages[[k, t]] - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn variance_grows_downstream() {
        let s = spec(3, vec![(PhaseLabel::A, 1.0)], 8);
        let ds = sample_voltages(&s, 50_000).unwrap();
        let var = ds.voltages.var_axis(Axis(1), 1.0);
        assert!(var[2] > var[0]);
    }

    #[test]
    fn determinism_and_exec_independence() {
        let s = spec(30, vec![(PhaseLabel::A, 0.3), (PhaseLabel::B, 0.3), (PhaseLabel::CA, 0.4)], 21);
        let a = sample_voltages_with(&s, 40, Exec::Sequential).unwrap();
        let b = sample_voltages_with(&s, 40, Exec::Parallel).unwrap();
        let c = sample_voltages(&s, 40).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn covariance_small_cases() {
        let mut s = spec(2, vec![(PhaseLabel::A, 1.0)], 0);
        s.z_mag = 1.0;
        s.delta_e = 1.0;
        s.sigma = 1.0;
        let one = theoretical_covariance(&s, &CouplingMatrix(array![[1.0]]));
        assert_eq!(one.into_array(), array![[1.0]]);
        let c = build_coupling_matrix(&[PhaseLabel::A, PhaseLabel::A], CouplingMode::Physical, 0);
        // CJ = [[1,0],[1,2]]
        assert_eq!(theoretical_covariance(&s, &c).into_array(), array![[1.0, 1.0], [1.0, 5.0]]);
    }

    #[test]
    fn monte_carlo_covariance() {
        let s = spec(8, vec![(PhaseLabel::A, 0.4), (PhaseLabel::B, 0.3), (PhaseLabel::AB, 0.3)], 13);
        let ds = sample_voltages(&s, 100_000).unwrap();
        let c = coupling_for(&s, ds.labels.as_ref().unwrap());
        let theory = theoretical_covariance(&s, &c);
        let mean = ds.voltages.mean_axis(Axis(1)).unwrap();
        let centered = &ds.voltages - &mean.insert_axis(Axis(1));
        let sample = centered.dot(&centered.t()) / (ds.n_timesteps() - 1) as f64;
        let rel = crate::numerics::relative_frobenius(sample.view(), theory.view());
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn bound_consistent_diagonal_growth() {
        let mut s = spec(60, vec![(PhaseLabel::A, 1.0)], 5);
        s.coupling_mode = CouplingMode::BoundConsistent;
        let labels = s.draw_labels();
        let c = coupling_for(&s, &labels);
        let sigma = theoretical_covariance(&s, &c);
        let alpha = s.alpha();
        for k in 1..=60usize {
            let base = (k * (k + 1) * (2 * k + 1)) as f64 / 6.0;
            let ratio = sigma.get(k - 1, k - 1) / alpha;
            assert!(ratio >= base / 3.0 * (1.0 - 1e-12) && ratio <= base * 4.0 / 3.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn affine_in_currents() {
        // Doubling σ with the same seed doubles every deviation from the σ→0 profile.
        let base = spec(12, vec![(PhaseLabel::A, 0.5), (PhaseLabel::BC, 0.5)], 17);
        let mut tiny = base.clone();
        tiny.sigma = 1e-300_f64.max(f64::MIN_POSITIVE);
        let mut double = base.clone();
        double.sigma = 2.0 * base.sigma;
        let v0 = sample_voltages(&tiny, 10).unwrap().voltages;
        let v1 = sample_voltages(&base, 10).unwrap().voltages;
        let v2 = sample_voltages(&double, 10).unwrap().voltages;
        let d1 = &v1 - &v0;
        let d2 = &v2 - &v0;
        assert!(crate::numerics::relative_frobenius(d2.view(), (d1 * 2.0).view()) < 1e-9);
    }

    #[test]
    fn label_marginals_chi_square() {
        use PhaseLabel::*;
        let mix = vec![(A, 0.5), (B, 0.2), (C, 0.2), (ABC, 0.1)];
        let s = spec(10_000, mix.clone(), 99);
        let labels = s.draw_labels();
        let chi2: f64 = mix
            .iter()
            .map(|(l, p)| {
                let obs = labels.iter().filter(|x| *x == l).count() as f64;
                let exp = p * 10_000.0;
                (obs - exp).powi(2) / exp
            })
            .sum();
        // 3 degrees of freedom, p = 0.01 critical value
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(1, vec![(PhaseLabel::A, 1.0)], 0);
        assert!(s.validate().is_err());
        s.n_customers = 5;
        s.phase_mix = vec![(PhaseLabel::A, 0.7)];
        assert!(s.validate().is_err());
        s.phase_mix = vec![(PhaseLabel::A, 1.0)];
        s.sigma = 0.0;
        assert!(s.validate().is_err());
    }
}
