//! Trial loop: data → preprocessing → selection → training → evaluation,
//! plus the unsupervised and nearest-neighbour baselines.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{Arm, DataSource, ExperimentConfig};
use super::io::{default_ids, load_dataset};
use super::preprocess::preprocess;
use crate::baselines::{correlation_linkage, kmeans_phase_cluster, knn_classify, map_clusters_to_labels};
use crate::circuit::{coupling_for, sample_voltages, theoretical_covariance, CircuitSpec, PhaseLabel, VoltageDataset};
use crate::entropy::EntropyReport;
use crate::exec::Exec;
use crate::infonet::{evaluate_accuracy, predict, train_classifier, TrainingConfig};
use crate::numerics::{pca_project, IndexSet};
use crate::selection::{cosine_kernel, select, select_random, SelectionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Synthesize,
    Preprocess,
    Select,
    Train,
    Evaluate,
    Baseline,
    Entropy,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Whether a failure came from the input or from the numerics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Data,
    Numerical,
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{stage} stage: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: String) -> Self {
        Self { stage, kind: FailureKind::Data, message }
    }

    pub fn numerical(stage: Stage, message: String) -> Self {
        Self { stage, kind: FailureKind::Numerical, message }
    }
}

fn data_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::new(stage, e.to_string())
}

fn num_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::numerical(stage, e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub method: String,
    pub circuit: String,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub customer_id: String,
    pub pc1: f64,
    pub pc2: f64,
    pub true_label: Option<PhaseLabel>,
    pub predicted: PhaseLabel,
}

/// Everything needed to regenerate a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_sha256: String,
    pub master_seed: u64,
    pub version: String,
    pub config_text: String,
    pub imputed_cells: usize,
    pub dropped_columns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmOutcome {
    pub arm: Arm,
    pub selection: SelectionResult,
    pub accuracy: f64,
    pub predicted: Vec<PhaseLabel>,
    pub representation: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub arms: Vec<ArmOutcome>,
    /// `(name, accuracy)` for each enabled baseline.
    pub baselines: Vec<(String, f64)>,
    pub truth: Vec<PhaseLabel>,
    pub dropped_columns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub accuracy: Vec<AccuracyRow>,
    pub embedding: Vec<EmbeddingRow>,
    pub entropy: EntropyReport,
    pub provenance: Provenance,
    pub trials: Vec<TrialOutcome>,
}

/// Data for one trial before preprocessing.
struct TrialData {
    raw: VoltageDataset,
    truth: Vec<PhaseLabel>,
    circuit: Option<CircuitSpec>,
}

struct Loaded {
    fixed: Option<(VoltageDataset, Vec<PhaseLabel>)>,
    ids: Vec<String>,
    imputed: usize,
}

fn load(config: &ExperimentConfig) -> Result<Loaded, PipelineError> {
    match &config.data {
        DataSource::Synth { spec, .. } => {
            Ok(Loaded { fixed: None, ids: default_ids(spec.n_customers), imputed: 0 })
        }
        DataSource::Csv { voltages, labels } => {
            let labels = labels.as_ref().ok_or_else(|| {
                PipelineError::new(Stage::Load, "experiments need a label file to train and score".into())
            })?;
            let d = load_dataset(voltages, Some(labels)).map_err(|e| data_err(Stage::Load)(&e))?;
            let truth = d.dataset.labels.clone().expect("labels were loaded");
            Ok(Loaded { fixed: Some((d.dataset, truth)), ids: d.ids, imputed: d.imputed_cells })
        }
    }
}

fn trial_data(config: &ExperimentConfig, loaded: &Loaded, seed: u64) -> Result<TrialData, PipelineError> {
    match (&config.data, &loaded.fixed) {
        (DataSource::Synth { spec, n_timesteps }, _) => {
            let spec = CircuitSpec { seed, ..spec.clone() };
            let raw = sample_voltages(&spec, *n_timesteps).map_err(|e| data_err(Stage::Synthesize)(&e))?;
            let truth = raw.labels.clone().expect("synthetic data is labelled");
            Ok(TrialData { raw, truth, circuit: Some(spec) })
        }
        (_, Some((raw, truth))) => Ok(TrialData { raw: raw.clone(), truth: truth.clone(), circuit: None }),
        _ => unreachable!("csv data is loaded up front"),
    }
}

fn distinct(labels: &[PhaseLabel]) -> usize {
    let mut l = labels.to_vec();
    l.sort();
    l.dedup();
    l.len()
}

/// Runs one selection arm on preprocessed features.
pub fn run_arm(
    features: ArrayView2<f64>,
    truth: &[PhaseLabel],
    arm: Arm,
    m: usize,
    training: &TrainingConfig,
    seed: u64,
) -> Result<ArmOutcome, PipelineError> {
    let kernel = cosine_kernel(features).map_err(|e| num_err(Stage::Select)(&e))?;
    let selection = select(arm.method, &kernel, features, m, seed).map_err(|e| num_err(Stage::Select)(&e))?;
    let labels: Vec<PhaseLabel> = selection.indices.as_slice().iter().map(|&i| truth[i]).collect();
    let cfg = TrainingConfig { beta: arm.beta, seed, ..training.clone() };
    let model = train_classifier(features, &selection.indices, &labels, &cfg).map_err(|e| num_err(Stage::Train)(&e))?;
    let pred = predict(&model, features).map_err(|e| num_err(Stage::Evaluate)(&e))?;
    let held_out = selection.indices.complement(truth.len());
    let p: Vec<PhaseLabel> = held_out.iter().map(|&i| pred.labels[i]).collect();
    let t: Vec<PhaseLabel> = held_out.iter().map(|&i| truth[i]).collect();
    let accuracy = evaluate_accuracy(&p, &t).map_err(|e| num_err(Stage::Evaluate)(&e))?;
    log::info!("arm {} seed {seed}: accuracy {accuracy:.4}", arm.tag());
    Ok(ArmOutcome { arm, selection, accuracy, predicted: pred.labels, representation: pred.representation })
}

fn held_out_accuracy(pred: &[PhaseLabel], truth: &[PhaseLabel], labeled: &IndexSet) -> Result<f64, PipelineError> {
    let rest = labeled.complement(truth.len());
    let p: Vec<PhaseLabel> = rest.iter().map(|&i| pred[i]).collect();
    let t: Vec<PhaseLabel> = rest.iter().map(|&i| truth[i]).collect();
    evaluate_accuracy(&p, &t).map_err(|e| num_err(Stage::Baseline)(&e))
}

/// Baselines scored on a uniformly random labelled subset of size `m`.
fn run_baselines(
    config: &ExperimentConfig,
    raw: &VoltageDataset,
    features: ArrayView2<f64>,
    truth: &[PhaseLabel],
    m: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>, PipelineError> {
    let b = &config.baselines;
    let mut out = Vec::new();
    if !(b.knn || b.correlation || b.kmeans) {
        return Ok(out);
    }
    let err = num_err(Stage::Baseline);
    let labeled = select_random(truth.len(), m, seed).map_err(|e| err(&e))?;
    let labels: Vec<PhaseLabel> = labeled.as_slice().iter().map(|&i| truth[i]).collect();
    let k = b.n_clusters.unwrap_or_else(|| distinct(truth)).min(truth.len());
    if b.knn {
        let train = features.select(Axis(0), labeled.as_slice());
        let pred = knn_classify(train.view(), &labels, features, b.knn_k.min(m)).map_err(|e| err(&e))?;
        out.push(("knn".to_string(), held_out_accuracy(&pred, truth, &labeled)?));
    }
    if b.correlation {
        let mut a = correlation_linkage(raw.voltages.view(), k).map_err(|e| err(&e))?;
        let pred = map_clusters_to_labels(&mut a, &labeled, &labels).map_err(|e| err(&e))?;
        out.push(("correlation".to_string(), held_out_accuracy(&pred, truth, &labeled)?));
    }
    if b.kmeans {
        let mut a = kmeans_phase_cluster(features, k, seed).map_err(|e| err(&e))?;
        let pred = map_clusters_to_labels(&mut a, &labeled, &labels).map_err(|e| err(&e))?;
        out.push(("kmeans".to_string(), held_out_accuracy(&pred, truth, &labeled)?));
    }
    Ok(out)
}

fn run_trial(config: &ExperimentConfig, loaded: &Loaded, trial: usize) -> Result<(TrialOutcome, TrialData), PipelineError> {
    let seed = config.master_seed.wrapping_add(trial as u64);
    let data = trial_data(config, loaded, seed)?;
    let (pre, stats) = preprocess(&data.raw).map_err(|e| data_err(Stage::Preprocess)(&e))?;
    let features = pre.voltages.view();
    let m = config.effective_m(data.truth.len(), distinct(&data.truth))?;
    let arms = config
        .arms
        .iter()
        .map(|&arm| run_arm(features, &data.truth, arm, m, &config.training, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let baselines = run_baselines(config, &data.raw, features, &data.truth, m, seed)?;
    let outcome = TrialOutcome {
        trial,
        seed,
        arms,
        baselines,
        truth: data.truth.clone(),
        dropped_columns: stats.dropped.len(),
    };
    Ok((outcome, data))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Between-class centroid distance (mean over class pairs) divided by the
/// mean distance of points to their own class centroid.
pub fn class_separation(points: ArrayView2<f64>, labels: &[PhaseLabel]) -> f64 {
    let mut classes: Vec<PhaseLabel> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let centroids: Vec<ndarray::Array1<f64>> = classes
        .iter()
        .map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == *c).collect();
            points.select(Axis(0), &idx).mean_axis(Axis(0)).unwrap()
        })
        .collect();
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let mut between = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            between += dist(centroids[i].view(), centroids[j].view());
            pairs += 1;
        }
    }
    let within = (0..labels.len())
        .map(|i| {
            let c = classes.iter().position(|c| *c == labels[i]).unwrap();
            dist(points.row(i), centroids[c].view())
        })
        .sum::<f64>()
        / labels.len() as f64;
    if pairs == 0 || within == 0.0 {
        return f64::NAN;
    }
    (between / pairs as f64) / within
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every trial and aggregates. Output depends only on `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle, PipelineError> {
    run_experiment_with(config, Exec::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, exec: Exec) -> Result<ReportBundle, PipelineError> {
    let loaded = load(config)?;
    let mut results = exec
        .map_range(config.trials, |t| run_trial(config, &loaded, t))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|(o, _)| o.trial);

    let mut accuracy = Vec::new();
    for (a, arm) in config.arms.iter().enumerate() {
        let accs: Vec<f64> = results.iter().map(|(o, _)| o.arms[a].accuracy).collect();
        let (mean, std) = mean_std(&accs);
        accuracy.push(AccuracyRow { method: arm.tag(), circuit: config.circuit_tag.clone(), mean, std, trials: accs.len() });
    }
    let n_baselines = results[0].0.baselines.len();
    for b in 0..n_baselines {
        let accs: Vec<f64> = results.iter().map(|(o, _)| o.baselines[b].1).collect();
        let (mean, std) = mean_std(&accs);
        accuracy.push(AccuracyRow {
            method: results[0].0.baselines[b].0.clone(),
            circuit: config.circuit_tag.clone(),
            mean,
            std,
            trials: accs.len(),
        });
    }

    let (last, last_data) = results.last().unwrap();
    let first_arm = &last.arms[0];
    let pca = pca_project(first_arm.representation.view(), 2).map_err(|e| num_err(Stage::Report)(&e))?;
    if pca.is_degenerate() {
        log::warn!("representation has rank {} below 2; padding the embedding with zeros", pca.rank);
    }
    let embedding = (0..last.truth.len())
        .map(|i| EmbeddingRow {
            customer_id: loaded.ids[i].clone(),
            pc1: pca.projected[[i, 0]],
            pc2: pca.projected[[i, 1]],
            true_label: Some(last.truth[i]),
            predicted: first_arm.predicted[i],
        })
        .collect();

    let n = last.truth.len();
    let mut entropy = EntropyReport::from_bounds(n).map_err(|e| num_err(Stage::Entropy)(&e))?;
    match &last_data.circuit {
        Some(spec) => {
            let sigma = theoretical_covariance(spec, &coupling_for(spec, &last.truth));
            entropy = entropy.with_covariance(&sigma).map_err(|e| num_err(Stage::Entropy)(&e))?;
            entropy.notes.push(format!("covariance: model covariance of trial {} circuit", last.trial));
        }
        None => entropy.notes.push("covariance: unavailable for measured data".into()),
    }

    let provenance = Provenance {
        config_sha256: sha256_hex(&config.source_text),
        master_seed: config.master_seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_text: config.source_text.clone(),
        imputed_cells: loaded.imputed,
        dropped_columns: results.iter().map(|(o, _)| o.dropped_columns).max().unwrap_or(0),
    };
    let trials = results.into_iter().map(|(o, _)| o).collect();
    Ok(ReportBundle { accuracy, embedding, entropy, provenance, trials })
}
