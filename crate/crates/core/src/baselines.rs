//! Comparison methods: k-nearest neighbours, complete-linkage clustering on
//! voltage correlation, and k-means.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::circuit::PhaseLabel;
use crate::numerics::IndexSet;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("k = {k} is outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("cluster count {k} is outside 1..={n}")]
    BadClusterCount { k: usize, n: usize },
    #[error("no labelled customers")]
    NoLabels,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

type Result<T> = std::result::Result<T, BaselineError>;

/// Cluster id per customer, ids contiguous from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub clusters: Vec<usize>,
    pub n_clusters: usize,
    pub mapping: Option<Vec<PhaseLabel>>,
    /// k-means objective after each assignment step; empty for linkage.
    pub objective_history: Vec<f64>,
}

impl ClusterAssignment {
    /// Renumbers ids in order of first appearance.
    fn from_raw(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let clusters: Vec<usize> = raw
            .iter()
            .map(|c| {
                let next = map.len();
                *map.entry(*c).or_insert(next)
            })
            .collect();
        Self { n_clusters: map.len(), clusters, mapping: None, objective_history: Vec::new() }
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.clusters.len()).filter(|&i| self.clusters[i] == cluster).collect()
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn majority(labels: impl Iterator<Item = PhaseLabel>) -> Option<PhaseLabel> {
    let mut counts = [0usize; 7];
    let mut any = false;
    for l in labels {
        counts[l.index()] += 1;
        any = true;
    }
    if !any {
        return None;
    }
    let best = (0..7).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    Some(PhaseLabel::ALL[best])
}

/// Majority vote of the `k` nearest training rows by Euclidean distance.
/// Distance ties keep the lower training index; vote ties the lower label index.
pub fn knn_classify(
    train: ArrayView2<f64>,
    train_labels: &[PhaseLabel],
    query: ArrayView2<f64>,
    k: usize,
) -> Result<Vec<PhaseLabel>> {
    let n = train.nrows();
    if n == 0 {
        return Err(BaselineError::EmptyTrain);
    }
    if k == 0 || k > n {
        return Err(BaselineError::BadK { k, n });
    }
    if train_labels.len() != n || train.ncols() != query.ncols() {
        return Err(BaselineError::ShapeMismatch(format!(
            "{n} training rows, {} labels, {} vs {} columns",
            train_labels.len(),
            train.ncols(),
            query.ncols()
        )));
    }
    Ok(query
        .rows()
        .into_iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = train.rows().into_iter().map(|r| sq_dist(q, r)).zip(0..n).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            majority(d[..k].iter().map(|&(_, i)| train_labels[i])).unwrap()
        })
        .collect())
}

/// Pearson correlation matrix of rows; `None` entries mark constant rows.
fn centred_unit_rows(data: ArrayView2<f64>) -> (Array2<f64>, Vec<bool>) {
    let mut out = data.to_owned();
    let mut constant = vec![false; data.nrows()];
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mean = row.mean().unwrap_or(0.0);
        row.mapv_inplace(|v| v - mean);
        let norm = row.dot(&row).sqrt();
        let scale = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if norm <= 1e-12 * (1.0 + mean.abs()) || scale == 0.0 {
            constant[i] = true;
        } else {
            row /= norm;
        }
    }
    (out, constant)
}

/// Complete-linkage agglomerative clustering on `1 − ρ`, where `ρ` is the
/// Pearson correlation between voltage rows, cut at `n_clusters`.
///
/// Rows with zero variance have no correlation; each becomes its own cluster
/// and the remaining rows share the rest of the cluster budget.
pub fn correlation_linkage(data: ArrayView2<f64>, n_clusters: usize) -> Result<ClusterAssignment> {
    let n = data.nrows();
    if n_clusters == 0 || n_clusters > n {
        return Err(BaselineError::BadClusterCount { k: n_clusters, n });
    }
    let (unit, constant) = centred_unit_rows(data);
    let active_rows: Vec<usize> = (0..n).filter(|&i| !constant[i]).collect();
    let n_const = n - active_rows.len();
    if n_const > 0 {
        log::warn!("{n_const} constant voltage rows placed in singleton clusters");
    }
    let target = n_clusters.saturating_sub(n_const).max(1);
    let mut raw = vec![usize::MAX; n];
    for i in 0..n {
        if constant[i] {
            raw[i] = n + i;
        }
    }
    let m = active_rows.len();
    if m > 0 {
        let sub = unit.select(Axis(0), &active_rows);
        let corr = sub.dot(&sub.t());
        let mut dist = corr.mapv(|c| 1.0 - c);
        let mut alive = vec![true; m];
        let mut owner: Vec<usize> = (0..m).collect();
        let mut clusters = m;
        while clusters > target {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..m {
                if !alive[i] {
                    continue;
                }
                for j in i + 1..m {
                    if alive[j] && dist[[i, j]] < best.0 {
                        best = (dist[[i, j]], i, j);
                    }
                }
            }
            let (_, a, b) = best;
            for k in 0..m {
                if alive[k] && k != a && k != b {
                    let d = dist[[a, k]].max(dist[[b, k]]);
                    dist[[a, k]] = d;
                    dist[[k, a]] = d;
                }
            }
            alive[b] = false;
            for o in owner.iter_mut() {
                if *o == b {
                    *o = a;
                }
            }
            clusters -= 1;
        }
        for (k, &row) in active_rows.iter().enumerate() {
            raw[row] = owner[k];
        }
    }
    Ok(ClusterAssignment::from_raw(&raw))
}

/// Lloyd's algorithm with farthest-point seeding.
///
/// The first centre is a row drawn from `seed`; each further centre is the row
/// farthest from those chosen. Stops after 100 iterations or once no centre
/// moves by more than 1e-8. An emptied cluster is reseeded at the row farthest
/// from its current centre.
pub fn kmeans_phase_cluster(data: ArrayView2<f64>, n_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = data.nrows();
    if n_clusters == 0 || n_clusters > n {
        return Err(BaselineError::BadClusterCount { k: n_clusters, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut centres = vec![data.row(first).to_owned()];
    let mut nearest: Vec<f64> = data.rows().into_iter().map(|r| sq_dist(r, centres[0].view())).collect();
    while centres.len() < n_clusters {
        let far = (0..n).fold(0, |b, i| if nearest[i] > nearest[b] { i } else { b });
        let c = data.row(far).to_owned();
        for (i, r) in data.rows().into_iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(r, c.view()));
        }
        centres.push(c);
    }

    let assign = |centres: &[Array1<f64>]| -> (Vec<usize>, Vec<f64>) {
        data.rows()
            .into_iter()
            .map(|r| {
                let mut best = (f64::INFINITY, 0);
                for (k, c) in centres.iter().enumerate() {
                    let d = sq_dist(r, c.view());
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                (best.1, best.0)
            })
            .unzip()
    };

    let mut history = Vec::new();
    let (mut labels, mut dists) = assign(&centres);
    history.push(dists.iter().sum::<f64>());
    for _ in 0..100 {
        let mut moved = 0.0f64;
        for k in 0..n_clusters {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
            let new = if members.is_empty() {
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                dists[far] = 0.0;
                data.row(far).to_owned()
            } else {
                data.select(Axis(0), &members).mean_axis(Axis(0)).unwrap()
            };
            moved = moved.max(sq_dist(new.view(), centres[k].view()).sqrt());
            centres[k] = new;
        }
        let next = assign(&centres);
        labels = next.0;
        dists = next.1;
        history.push(dists.iter().sum::<f64>());
        if moved < 1e-8 {
            break;
        }
    }
    let mut out = ClusterAssignment::from_raw(&labels);
    out.objective_history = history;
    Ok(out)
}

/// Label per customer: each cluster takes the majority label of its labelled
/// members, or the global labelled majority when it has none. Vote ties go
/// to the lower label index.
pub fn map_clusters_to_labels(
    assignment: &mut ClusterAssignment,
    labeled: &IndexSet,
    labels: &[PhaseLabel],
) -> Result<Vec<PhaseLabel>> {
    if labeled.is_empty() {
        return Err(BaselineError::NoLabels);
    }
    if labels.len() != labeled.len() {
        return Err(BaselineError::ShapeMismatch(format!("{} labels for {} indices", labels.len(), labeled.len())));
    }
    let n = assignment.clusters.len();
    if let Some(&i) = labeled.as_slice().iter().find(|&&i| i >= n) {
        return Err(BaselineError::ShapeMismatch(format!("labelled index {i} out of range for {n} customers")));
    }
    let global = majority(labels.iter().copied()).unwrap();
    let mapping: Vec<PhaseLabel> = (0..assignment.n_clusters)
        .map(|c| {
            let own = labeled
                .as_slice()
                .iter()
                .zip(labels)
                .filter(|(&i, _)| assignment.clusters[i] == c)
                .map(|(_, &l)| l);
            majority(own).unwrap_or(global)
        })
        .collect();
    let out = assignment.clusters.iter().map(|&c| mapping[c]).collect();
    assignment.mapping = Some(mapping);
    Ok(out)
}
