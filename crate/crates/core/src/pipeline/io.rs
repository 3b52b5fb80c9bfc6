//! CSV dataset files.
//!
//! Voltages: header `customer_id,t0,t1,...`, one row per customer. Empty cells
//! are filled with the mean of the row's remaining cells. Labels: header
//! `customer_id,phase`, in any row order.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::circuit::{PhaseLabel, VoltageDataset};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: String, line: u64, column: usize, message: String },
    #[error("{path}: line {line}: unknown phase label {label:?}")]
    UnknownLabel { path: String, line: u64, label: String },
    #[error("customer ids differ between voltage and label files: {0}")]
    IdMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IoError::Io(io),
            other => IoError::Parse { path: String::new(), line, column: 0, message: format!("{other:?}") },
        }
    }
}

/// A dataset together with the customer ids and imputation count.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: VoltageDataset,
    pub ids: Vec<String>,
    pub imputed_cells: usize,
}

fn with_path(e: IoError, path: &Path) -> IoError {
    match e {
        IoError::Parse { line, column, message, .. } => {
            IoError::Parse { path: path.display().to_string(), line, column, message }
        }
        other => other,
    }
}

fn read_voltages(path: &Path) -> Result<(Vec<String>, Array2<f64>, usize), IoError> {
    let p = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(|e| with_path(e.into(), path))?;
    let header = reader.headers().map_err(|e| with_path(e.into(), path))?.clone();
    let parse_err = |line: u64, column: usize, message: String| IoError::Parse { path: p.clone(), line, column, message };
    if header.get(0).map(str::trim) != Some("customer_id") {
        return Err(parse_err(1, 1, "first header field must be customer_id".into()));
    }
    for (j, h) in header.iter().enumerate().skip(1) {
        if h.trim() != format!("t{}", j - 1) {
            return Err(parse_err(1, j + 1, format!("expected header t{}, found {h:?}", j - 1)));
        }
    }
    let t = header.len() - 1;
    if t == 0 {
        return Err(parse_err(1, 1, "no time columns".into()));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut imputed = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| with_path(e.into(), path))?;
        let line = record.position().map(|pos| pos.line()).unwrap_or(0);
        if record.len() != t + 1 {
            return Err(parse_err(line, record.len().min(t + 1), format!("expected {} fields, found {}", t + 1, record.len())));
        }
        ids.push(record[0].trim().to_string());
        let mut row: Vec<Option<f64>> = Vec::with_capacity(t);
        for j in 1..=t {
            let cell = record[j].trim();
            if cell.is_empty() {
                row.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| parse_err(line, j + 1, format!("cannot parse {cell:?} as a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, j + 1, format!("non-finite value {cell:?}")));
                }
                row.push(Some(v));
            }
        }
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(parse_err(line, 2, "row has no values".into()));
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        imputed += t - present.len();
        values.extend(row.into_iter().map(|v| v.unwrap_or(mean)));
    }
    let n = ids.len();
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.clone(), i) {
            return Err(IoError::IdMismatch(format!("customer id {id:?} appears on data rows {} and {}", prev + 1, i + 1)));
        }
    }
    let v = Array2::from_shape_vec((n, t), values).expect("rows of equal length");
    Ok((ids, v, imputed))
}

fn read_labels(path: &Path, ids: &[String]) -> Result<Vec<PhaseLabel>, IoError> {
    let p = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(|e| with_path(e.into(), path))?;
    let header = reader.headers().map_err(|e| with_path(e.into(), path))?.clone();
    if header.len() != 2 || header[0].trim() != "customer_id" || header[1].trim() != "phase" {
        return Err(IoError::Parse { path: p, line: 1, column: 1, message: "header must be customer_id,phase".into() });
    }
    let mut by_id: HashMap<String, PhaseLabel> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| with_path(e.into(), path))?;
        let line = record.position().map(|pos| pos.line()).unwrap_or(0);
        let raw = record[1].trim();
        let label: PhaseLabel = raw
            .parse()
            .map_err(|_| IoError::UnknownLabel { path: p.clone(), line, label: raw.to_string() })?;
        if by_id.insert(record[0].trim().to_string(), label).is_some() {
            return Err(IoError::IdMismatch(format!("label file repeats customer id {:?}", &record[0])));
        }
    }
    if by_id.len() != ids.len() {
        return Err(IoError::IdMismatch(format!("{} labels for {} customers", by_id.len(), ids.len())));
    }
    ids.iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| IoError::IdMismatch(format!("no label for customer {id:?}"))))
        .collect()
}

pub fn load_dataset(voltages: &Path, labels: Option<&Path>) -> Result<LoadedDataset, IoError> {
    let (ids, v, imputed_cells) = read_voltages(voltages)?;
    let labels = labels.map(|l| read_labels(l, &ids)).transpose()?;
    let dataset = VoltageDataset::new(v, labels).map_err(|e| IoError::IdMismatch(e.to_string()))?;
    Ok(LoadedDataset { dataset, ids, imputed_cells })
}

/// Writes the voltage file and, if the dataset has labels and a path is
/// given, the label file. Values use the shortest exact decimal form.
pub fn save_dataset(data: &VoltageDataset, ids: &[String], voltages: &Path, labels: Option<&Path>) -> Result<(), IoError> {
    if ids.len() != data.n_customers() {
        return Err(IoError::IdMismatch(format!("{} ids for {} customers", ids.len(), data.n_customers())));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(voltages)?;
    let mut header = vec!["customer_id".to_string()];
    header.extend((0..data.n_timesteps()).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(data.voltages.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let (Some(path), Some(l)) = (labels, &data.labels) {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(["customer_id", "phase"])?;
        for (id, label) in ids.iter().zip(l) {
            w.write_record([id.as_str(), label.as_str()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Ids `c0, c1, ...`.
pub fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}
