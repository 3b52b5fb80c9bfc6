//! Experiment configuration: a TOML file with one level of sections.
//!
//! ```toml
//! [data]
//! source = "synth"          # or "csv" with `voltages` and optional `labels`
//! n_customers = 500
//! n_timesteps = 168
//! phase_mix = "A:0.6, B:0.3, C:0.1"
//!
//! [selection]
//! method = "inverse_schur"
//!
//! [training]
//! beta = 0.1
//!
//! [experiment]
//! trials = 10
//! seed = 0
//! arms = "inverse_schur:0.1, random:0.0"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::experiment::{PipelineError, Stage};
use crate::circuit::{CircuitSpec, CouplingMode, PhaseLabel};
use crate::infonet::TrainingConfig;
use crate::selection::SelectionMethod;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth { spec: CircuitSpec, n_timesteps: usize },
    Csv { voltages: PathBuf, labels: Option<PathBuf> },
}

/// One selection method paired with one β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    pub method: SelectionMethod,
    pub beta: f64,
}

impl Arm {
    pub fn tag(&self) -> String {
        format!("{}+beta={}", self.method.as_str(), self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineToggles {
    pub knn: bool,
    pub knn_k: usize,
    pub correlation: bool,
    pub kmeans: bool,
    /// Cluster count; defaults to the number of distinct labels.
    pub n_clusters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub circuit_tag: String,
    pub m: Option<usize>,
    pub arms: Vec<Arm>,
    pub training: TrainingConfig,
    pub baselines: BaselineToggles,
    pub trials: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// The text the configuration was parsed from.
    pub source_text: String,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: Option<String>,
    tag: Option<String>,
    n_customers: Option<usize>,
    n_timesteps: Option<usize>,
    delta_e: Option<f64>,
    z_mag: Option<f64>,
    sigma: Option<f64>,
    phase_mix: Option<String>,
    coupling_mode: Option<String>,
    voltages: Option<PathBuf>,
    labels: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSelection {
    method: Option<String>,
    m: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    beta: Option<f64>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    hidden_width: Option<usize>,
    stat_hidden_width: Option<usize>,
    encoder_noise_std: Option<f64>,
    optimizer: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawBaselines {
    knn: Option<bool>,
    knn_k: Option<usize>,
    correlation: Option<bool>,
    kmeans: Option<bool>,
    n_clusters: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    trials: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    arms: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    selection: RawSelection,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    baselines: RawBaselines,
    #[serde(default)]
    experiment: RawExperiment,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::new(Stage::Config, msg.into())
}

/// Parses `"A:0.5, B:0.5"`.
pub fn parse_phase_mix(text: &str) -> Result<Vec<(PhaseLabel, f64)>, PipelineError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (l, p) = item.split_once(':').ok_or_else(|| config_err(format!("phase_mix entry {item:?}")))?;
            let label: PhaseLabel = l.trim().parse().map_err(|e: crate::circuit::CircuitError| config_err(e.to_string()))?;
            let p: f64 = p.trim().parse().map_err(|_| config_err(format!("phase_mix probability {p:?}")))?;
            Ok((label, p))
        })
        .collect()
}

/// Parses `"inverse_schur:0.1, random:0"`.
pub fn parse_arms(text: &str) -> Result<Vec<Arm>, PipelineError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (m, b) = item.split_once(':').ok_or_else(|| config_err(format!("arm entry {item:?}")))?;
            let method: SelectionMethod = m.trim().parse().map_err(|e: crate::selection::SelectionError| config_err(e.to_string()))?;
            let beta: f64 = b.trim().parse().map_err(|_| config_err(format!("arm beta {b:?}")))?;
            Ok(Arm { method, beta })
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let d = raw.data;
        let source = d.source.as_deref().unwrap_or("synth");
        let data = match source {
            "synth" => {
                let phase_mix = match &d.phase_mix {
                    Some(t) => parse_phase_mix(t)?,
                    None => vec![(PhaseLabel::A, 1.0 / 3.0), (PhaseLabel::B, 1.0 / 3.0), (PhaseLabel::C, 1.0 / 3.0)],
                };
                let coupling_mode: CouplingMode = d
                    .coupling_mode
                    .as_deref()
                    .unwrap_or("physical")
                    .parse()
                    .map_err(|e: crate::circuit::CircuitError| config_err(e.to_string()))?;
                let spec = CircuitSpec {
                    n_customers: d.n_customers.unwrap_or(500),
                    delta_e: d.delta_e.unwrap_or(0.001),
                    z_mag: d.z_mag.unwrap_or(0.001),
                    sigma: d.sigma.unwrap_or(0.2),
                    phase_mix,
                    coupling_mode,
                    seed: 0,
                };
                spec.validate().map_err(|e| config_err(e.to_string()))?;
                DataSource::Synth { spec, n_timesteps: d.n_timesteps.unwrap_or(168) }
            }
            "csv" => DataSource::Csv {
                voltages: d.voltages.ok_or_else(|| config_err("csv source needs data.voltages"))?,
                labels: d.labels,
            },
            other => return Err(config_err(format!("unknown data source {other:?}"))),
        };

        let defaults = TrainingConfig::default();
        let t = raw.training;
        let training = TrainingConfig {
            beta: t.beta.unwrap_or(defaults.beta),
            learning_rate: t.learning_rate.unwrap_or(defaults.learning_rate),
            epochs: t.epochs.unwrap_or(defaults.epochs),
            batch_size: t.batch_size.unwrap_or(defaults.batch_size),
            hidden_width: t.hidden_width.unwrap_or(defaults.hidden_width),
            stat_hidden_width: t.stat_hidden_width.unwrap_or(defaults.stat_hidden_width),
            encoder_noise_std: t.encoder_noise_std.unwrap_or(defaults.encoder_noise_std),
            optimizer: match t.optimizer {
                Some(o) => o.parse().map_err(|e: crate::infonet::InfonetError| config_err(e.to_string()))?,
                None => defaults.optimizer,
            },
            seed: 0,
        };
        training.validate().map_err(|e| config_err(e.to_string()))?;

        let method: SelectionMethod = raw
            .selection
            .method
            .as_deref()
            .unwrap_or("inverse_schur")
            .parse()
            .map_err(|e: crate::selection::SelectionError| config_err(e.to_string()))?;
        let arms = match raw.experiment.arms {
            Some(text) => parse_arms(&text)?,
            None => vec![Arm { method, beta: training.beta }],
        };
        if arms.is_empty() {
            return Err(config_err("experiment.arms is empty"));
        }
        let b = raw.baselines;
        let trials = raw.experiment.trials.unwrap_or(10);
        if trials == 0 {
            return Err(config_err("experiment.trials must be at least 1"));
        }
        let cfg = ExperimentConfig {
            data,
            circuit_tag: d.tag.unwrap_or_else(|| if source == "synth" { "synthetic".into() } else { "csv".into() }),
            m: raw.selection.m,
            arms,
            training,
            baselines: BaselineToggles {
                knn: b.knn.unwrap_or(false),
                knn_k: b.knn_k.unwrap_or(1),
                correlation: b.correlation.unwrap_or(false),
                kmeans: b.kmeans.unwrap_or(false),
                n_clusters: b.n_clusters,
            },
            trials,
            master_seed: raw.experiment.seed.unwrap_or(0),
            output_dir: raw.experiment.output_dir.unwrap_or_else(|| PathBuf::from("phaseid-out")),
            source_text: text.to_string(),
        };
        if let Some(m) = cfg.m {
            if m == 0 {
                return Err(config_err("selection.m must be at least 1"));
            }
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Training-set size for `n` customers: the configured `m`, else 5% of `n`
    /// rounded, but never fewer than `n_classes`.
    pub fn effective_m(&self, n: usize, n_classes: usize) -> Result<usize, PipelineError> {
        let m = self.m.unwrap_or_else(|| ((n as f64 * 0.05).round() as usize).max(n_classes).max(1));
        if m < n_classes {
            return Err(config_err(format!("m = {m} is below the {n_classes} classes")));
        }
        if m >= n {
            return Err(config_err(format!("m = {m} leaves no customers to evaluate out of {n}")));
        }
        Ok(m)
    }
}
