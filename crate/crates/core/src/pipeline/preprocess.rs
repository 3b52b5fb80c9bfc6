//! Per-customer self-normalisation followed by per-timestep standardisation.

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::circuit::VoltageDataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("customer row {0} has zero time-average")]
    ZeroMeanRow(usize),
    #[error("every time column is constant across customers")]
    AllColumnsConstant,
    #[error("statistics cover {expected} columns but data has {found}")]
    StatsMismatch { expected: usize, found: usize },
}

/// Divides each customer's series by its own time-average, so 120 V and 240 V
/// services land on the same scale.
pub fn self_normalize(data: &VoltageDataset) -> Result<VoltageDataset, PreprocessError> {
    let mut out = data.voltages.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mean = row.mean().unwrap_or(0.0);
        if mean == 0.0 || !mean.is_finite() {
            return Err(PreprocessError::ZeroMeanRow(i));
        }
        row.mapv_inplace(|v| v / mean);
    }
    Ok(VoltageDataset { voltages: out, labels: data.labels.clone() })
}

/// Column statistics from [`batch_normalize`], reusable on other data with
/// the same timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with std ≤ 1e-12; they are dropped from the output.
    pub dropped: Vec<usize>,
}

impl BatchNormStats {
    pub fn apply(&self, data: &VoltageDataset) -> Result<VoltageDataset, PreprocessError> {
        let t = data.n_timesteps();
        if t != self.means.len() {
            return Err(PreprocessError::StatsMismatch { expected: self.means.len(), found: t });
        }
        let kept: Vec<usize> = (0..t).filter(|c| !self.dropped.contains(c)).collect();
        let v = &data.voltages;
        let out = Array2::from_shape_fn((v.nrows(), kept.len()), |(i, j)| {
            let c = kept[j];
            (v[[i, c]] - self.means[c]) / self.stds[c]
        });
        Ok(VoltageDataset { voltages: out, labels: data.labels.clone() })
    }
}

/// Standardises every timestep column across customers to mean 0 and
/// (population) standard deviation 1. Constant columns are dropped with a warning.
pub fn batch_normalize(data: &VoltageDataset) -> Result<(VoltageDataset, BatchNormStats), PreprocessError> {
    let v = &data.voltages;
    let means = v.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default();
    let stds: Vec<f64> = v.std_axis(Axis(0), 0.0).to_vec();
    let dropped: Vec<usize> = stds
        .iter()
        .enumerate()
        .filter(|(_, s)| !(**s > 1e-12))
        .map(|(c, _)| c)
        .collect();
    if !dropped.is_empty() {
        log::warn!("dropping {} constant time columns", dropped.len());
    }
    if dropped.len() == v.ncols() {
        return Err(PreprocessError::AllColumnsConstant);
    }
    let stats = BatchNormStats { means, stds, dropped };
    let out = stats.apply(data)?;
    Ok((out, stats))
}

/// `self_normalize` then `batch_normalize`.
pub fn preprocess(data: &VoltageDataset) -> Result<(VoltageDataset, BatchNormStats), PreprocessError> {
    batch_normalize(&self_normalize(data)?)
}
