//! Unsupervised training-set selection over a cosine kernel.
//!
//! The quality score of a candidate set `S` is `Trace √(K/K_SS)`: the summed
//! residual standard deviation of the unselected points after conditioning on
//! the selected ones. Smaller is better.
//!
//! [`select_inverse_schur`] is the cubic-time heuristic: invert `K` once and take
//! the points with the smallest diagonal of `K⁻¹`. That leaves the large
//! diagonal entries in the unselected block of `K⁻¹`, which is `(K/K_SS)⁻¹`, so
//! `Trace (K/K_SS)⁻¹` is large. The greedy, exhaustive, facility-location and
//! random selectors exist for comparison.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::circuit::VoltageDataset;
use crate::exec::Exec;
use crate::numerics::{
    invert_spd, min_eigenvalue, schur_complement, trace_elementwise_sqrt, IndexSet, NumericsError,
    SymMatrix,
};
use crate::pipeline::preprocess::{preprocess, PreprocessError};

/// Enumeration cap for [`select_exhaustive`].
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;
/// Enumeration cap for [`check_loewner_lemma`].
pub const LOEWNER_LIMIT: u128 = 10_000;
/// Minimum eigenvalue at which a difference still counts as PSD.
pub const PSD_TOL: f64 = -1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("cannot select {m} of {n} points")]
    BadCardinality { m: usize, n: usize },
    #[error("{count} subsets exceed the enumeration limit {limit}")]
    TooLarge { count: u128, limit: u128 },
    #[error("unknown selection method {0:?}")]
    UnknownMethod(String),
    #[error("malformed selection record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

pub type Result<T> = std::result::Result<T, SelectionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SelectionMethod {
    InverseSchur,
    Greedy,
    Exhaustive,
    Facility,
    Random,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::InverseSchur => "inverse_schur",
            SelectionMethod::Greedy => "greedy",
            SelectionMethod::Exhaustive => "exhaustive",
            SelectionMethod::Facility => "facility",
            SelectionMethod::Random => "random",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self> {
        use SelectionMethod::*;
        [InverseSchur, Greedy, Exhaustive, Facility, Random]
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| SelectionError::UnknownMethod(s.to_string()))
    }
}

/// A chosen training set.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub indices: IndexSet,
    /// `Trace √(K/K_SS)`; zero when every point is selected.
    pub objective: f64,
    pub method: SelectionMethod,
    /// Wall-clock seconds spent selecting.
    pub runtime: f64,
}

impl SelectionResult {
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// Line-oriented text record.
    pub fn to_record(&self) -> String {
        let idx: Vec<String> = self.indices.as_slice().iter().map(|i| i.to_string()).collect();
        format!(
            "method {}\nm {}\nobjective {}\nruntime {}\nindices {}\n",
            self.method,
            self.m(),
            self.objective,
            self.runtime,
            idx.join(" ")
        )
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let bad = |m: &str| SelectionError::BadRecord(m.to_string());
        let mut method = None;
        let mut m = None;
        let mut objective = None;
        let mut runtime = None;
        let mut indices = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "method" => method = Some(rest.parse::<SelectionMethod>()?),
                "m" => m = Some(rest.trim().parse::<usize>().map_err(|_| bad("m"))?),
                "objective" => objective = Some(rest.trim().parse::<f64>().map_err(|_| bad("objective"))?),
                "runtime" => runtime = Some(rest.trim().parse::<f64>().map_err(|_| bad("runtime"))?),
                "indices" => {
                    let v = rest
                        .split_whitespace()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("indices"))?;
                    indices = Some(IndexSet::new(v)?);
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        let indices = indices.ok_or_else(|| bad("missing indices"))?;
        if m.ok_or_else(|| bad("missing m"))? != indices.len() {
            return Err(bad("m does not match the index count"));
        }
        Ok(Self {
            indices,
            objective: objective.ok_or_else(|| bad("missing objective"))?,
            method: method.ok_or_else(|| bad("missing method"))?,
            runtime: runtime.ok_or_else(|| bad("missing runtime"))?,
        })
    }
}

/// Cosine kernel over customer rows, on preprocessed features when
/// `preprocessed` is set (the default used by the pipeline).
pub fn cosine_kernel_matrix(data: &VoltageDataset, preprocessed: bool) -> Result<SymMatrix> {
    if preprocessed {
        let (pre, _) = preprocess(data)?;
        cosine_kernel(pre.voltages.view())
    } else {
        cosine_kernel(data.voltages.view())
    }
}

/// `K[i][j] = xᵢᵀxⱼ / (‖xᵢ‖‖xⱼ‖)` over the rows of `features`.
pub fn cosine_kernel(features: ArrayView2<f64>) -> Result<SymMatrix> {
    let unit = unit_rows(features)?;
    let mut k = unit.dot(&unit.t());
    let n = k.nrows();
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in 0..i {
            let v = 0.5 * (k[[i, j]] + k[[j, i]]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(SymMatrix::new(k)?)
}

fn unit_rows(features: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut unit = features.to_owned();
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) {
            return Err(SelectionError::ZeroNormRow(i));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(unit)
}

/// `Trace √(K/K_SS)` for a non-empty proper subset.
pub fn selection_objective(k: &SymMatrix, s: &IndexSet) -> Result<f64> {
    Ok(trace_elementwise_sqrt(&schur_complement(k, s)?)?)
}

/// Objective that also accepts the full set (score zero).
fn score(k: &SymMatrix, s: &IndexSet) -> Result<f64> {
    if s.len() == k.dim() {
        Ok(0.0)
    } else {
        selection_objective(k, s)
    }
}

fn check_cardinality(m: usize, n: usize) -> Result<()> {
    if m == 0 || m >= n {
        Err(SelectionError::BadCardinality { m, n })
    } else {
        Ok(())
    }
}

pub fn select_inverse_schur(k: &SymMatrix, m: usize) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = k.dim();
    check_cardinality(m, n)?;
    let inv = invert_spd(k)?;
    let diag = inv.diag();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]).then(a.cmp(&b)));
    order.truncate(m);
    let indices = IndexSet::new(order)?;
    let objective = selection_objective(k, &indices)?;
    Ok(SelectionResult {
        indices,
        objective,
        method: SelectionMethod::InverseSchur,
        runtime: start.elapsed().as_secs_f64(),
    })
}

pub fn select_greedy(k: &SymMatrix, m: usize) -> Result<SelectionResult> {
    select_greedy_with(k, m, Exec::default())
}

/// Adds, one at a time, the point whose inclusion gives the smallest objective.
pub fn select_greedy_with(k: &SymMatrix, m: usize, exec: Exec) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = k.dim();
    check_cardinality(m, n)?;
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut objective = f64::INFINITY;
    for _ in 0..m {
        let candidates: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
        let scores = exec.map_slice(&candidates, |&c| {
            let mut trial = chosen.clone();
            trial.push(c);
            let set = IndexSet::new(trial)?;
            selection_objective(k, &set)
        });
        let mut best: Option<(f64, usize)> = None;
        for (c, s) in candidates.into_iter().zip(scores) {
            let s = s?;
            if best.is_none_or(|(bs, _)| s < bs) {
                best = Some((s, c));
            }
        }
        let (s, c) = best.expect("at least one candidate");
        chosen.push(c);
        objective = s;
    }
    Ok(SelectionResult {
        indices: IndexSet::new(chosen)?,
        objective,
        method: SelectionMethod::Greedy,
        runtime: start.elapsed().as_secs_f64(),
    })
}

/// `C(n, m)`, saturating.
pub fn binomial(n: usize, m: usize) -> u128 {
    if m > n {
        return 0;
    }
    let m = m.min(n - m);
    let mut acc: u128 = 1;
    for i in 0..m {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Calls `f` on every `m`-subset of `0..n` whose smallest element is `first`,
/// in lexicographic order.
fn for_each_combination_from(n: usize, m: usize, first: usize, mut f: impl FnMut(&[usize])) {
    if m == 0 || first + m > n {
        return;
    }
    let mut combo: Vec<usize> = (first..first + m).collect();
    loop {
        f(&combo);
        // advance positions 1..m, keeping position 0 fixed
        let mut i = m;
        loop {
            if i <= 1 {
                return;
            }
            i -= 1;
            if combo[i] < n - (m - i) {
                break;
            }
        }
        combo[i] += 1;
        for j in (i + 1)..m {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Every `m`-subset of `0..n` in lexicographic order.
pub fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for first in 0..n {
        for_each_combination_from(n, m, first, |c| out.push(c.to_vec()));
    }
    out
}

pub fn select_exhaustive(k: &SymMatrix, m: usize) -> Result<SelectionResult> {
    select_exhaustive_with(k, m, Exec::default())
}

/// Global minimiser of the objective over all `m`-subsets; ties go to the
/// lexicographically smallest set.
pub fn select_exhaustive_with(k: &SymMatrix, m: usize, exec: Exec) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = k.dim();
    check_cardinality(m, n)?;
    let count = binomial(n, m);
    if count > EXHAUSTIVE_LIMIT {
        return Err(SelectionError::TooLarge { count, limit: EXHAUSTIVE_LIMIT });
    }
    // one work item per leading index; each returns its own lexicographic best
    let partial = exec.map_range(n, |first| -> Result<Option<(f64, Vec<usize>)>> {
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut err = None;
        for_each_combination_from(n, m, first, |c| {
            if err.is_some() {
                return;
            }
            match selection_objective(k, &IndexSet(c.to_vec())) {
                Ok(s) => {
                    if best.as_ref().is_none_or(|(bs, _)| s < *bs) {
                        best = Some((s, c.to_vec()));
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(best),
        }
    });
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in partial {
        if let Some((s, c)) = p? {
            // partials arrive in increasing leading index, so strict < keeps
            // the lexicographically first set among ties
            if best.as_ref().is_none_or(|(bs, _)| s < *bs) {
                best = Some((s, c));
            }
        }
    }
    let (objective, indices) = best.expect("n > m >= 1 gives at least one subset");
    Ok(SelectionResult {
        indices: IndexSet(indices),
        objective,
        method: SelectionMethod::Exhaustive,
        runtime: start.elapsed().as_secs_f64(),
    })
}

/// Chordal distance induced by the cosine kernel, `√(2 - 2 cos)`.
fn chordal(unit: &Array2<f64>, i: usize, j: usize) -> f64 {
    let c = unit.row(i).dot(&unit.row(j)).clamp(-1.0, 1.0);
    (2.0 - 2.0 * c).max(0.0).sqrt()
}

/// k-center greedy: start from the largest-norm row, then repeatedly add the
/// row farthest (chordal metric) from everything chosen so far.
pub fn select_facility_location(features: ArrayView2<f64>, m: usize) -> Result<IndexSet> {
    let n = features.nrows();
    if m == 0 || m > n {
        return Err(SelectionError::BadCardinality { m, n });
    }
    let unit = unit_rows(features)?;
    let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut first = 0;
    for i in 1..n {
        if norms[i] > norms[first] {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut min_dist: Vec<f64> = (0..n).map(|i| chordal(&unit, first, i)).collect();
    while chosen.len() < m {
        let mut next = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if next.is_none_or(|b: usize| min_dist[i] > min_dist[b]) {
                next = Some(i);
            }
        }
        let next = next.expect("fewer than n chosen");
        taken[next] = true;
        chosen.push(next);
        for i in 0..n {
            min_dist[i] = min_dist[i].min(chordal(&unit, next, i));
        }
    }
    Ok(IndexSet::new(chosen)?)
}

/// Covering radius of `chosen` in the chordal metric (used to compare k-center
/// solutions).
pub fn covering_radius(features: ArrayView2<f64>, chosen: &[usize]) -> Result<f64> {
    let unit = unit_rows(features)?;
    Ok((0..unit.nrows())
        .map(|i| chosen.iter().map(|&c| chordal(&unit, c, i)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Uniform `m`-subset of `0..n`, deterministic per seed.
pub fn select_random(n: usize, m: usize, seed: u64) -> Result<IndexSet> {
    if m > n {
        return Err(SelectionError::BadCardinality { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(IndexSet::new(rand::seq::index::sample(&mut rng, n, m).into_vec())?)
}

/// Runs any selector and scores the result against `kernel`.
///
/// `features` are the rows the kernel was built from; only facility location
/// reads them.
pub fn select(
    method: SelectionMethod,
    kernel: &SymMatrix,
    features: ArrayView2<f64>,
    m: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let start = Instant::now();
    let indices = match method {
        SelectionMethod::InverseSchur => return select_inverse_schur(kernel, m),
        SelectionMethod::Greedy => return select_greedy(kernel, m),
        SelectionMethod::Exhaustive => return select_exhaustive(kernel, m),
        SelectionMethod::Facility => select_facility_location(features, m)?,
        SelectionMethod::Random => select_random(kernel.dim(), m, seed)?,
    };
    let runtime = start.elapsed().as_secs_f64();
    let objective = score(kernel, &indices)?;
    Ok(SelectionResult { indices, objective, method, runtime })
}

/// Outcome of [`check_loewner_lemma`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoewnerReport {
    pub holds: bool,
    /// Subset maximising `Trace (K/K_SS)⁻¹`.
    pub maximizer: IndexSet,
    /// A subset whose complement lies strictly below the maximiser's, if any.
    pub witness: Option<IndexSet>,
    /// Subsets whose complement dominates the maximiser's in Loewner order.
    pub dominating: usize,
    pub subsets_checked: usize,
}

pub fn check_loewner_lemma(k: &SymMatrix, m: usize) -> Result<LoewnerReport> {
    check_loewner_lemma_with(k, m, Exec::default())
}

/// Brute-force check that no Schur complement sits strictly below the one whose
/// inverse has the largest trace.
pub fn check_loewner_lemma_with(k: &SymMatrix, m: usize, exec: Exec) -> Result<LoewnerReport> {
    let n = k.dim();
    check_cardinality(m, n)?;
    let count = binomial(n, m);
    if count > LOEWNER_LIMIT {
        return Err(SelectionError::TooLarge { count, limit: LOEWNER_LIMIT });
    }
    let subsets = combinations(n, m);
    let complements = exec.map_slice(&subsets, |s| -> Result<(SymMatrix, f64)> {
        let sc = schur_complement(k, &IndexSet(s.clone()))?;
        let inv_trace = invert_spd(&sc)?.trace();
        Ok((sc, inv_trace))
    });
    let complements: Vec<(SymMatrix, f64)> = complements.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (i, (_, t)) in complements.iter().enumerate() {
        if *t > complements[best].1 {
            best = i;
        }
    }
    let a_star = &complements[best].0;
    let scale = a_star.as_array().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let verdicts = exec.map_range(complements.len(), |i| {
        if i == best {
            return (false, false);
        }
        let b = &complements[i].0;
        let diff = a_star.as_array() - b.as_array();
        if diff.iter().all(|v| v.abs() <= 1e-12 * scale) {
            return (false, false);
        }
        let d = SymMatrix::symmetrized(diff).expect("square");
        let below = min_eigenvalue(&d) >= PSD_TOL;
        let neg = SymMatrix::symmetrized(-d.into_array()).expect("square");
        let above = min_eigenvalue(&neg) >= PSD_TOL;
        (below, above)
    });
    let witness = verdicts.iter().position(|(below, _)| *below).map(|i| IndexSet(subsets[i].clone()));
    let dominating = verdicts.iter().filter(|(_, above)| *above).count();
    Ok(LoewnerReport {
        holds: witness.is_none(),
        maximizer: IndexSet(subsets[best].clone()),
        witness,
        dominating,
        subsets_checked: subsets.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{random_spd, relative_frobenius};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_cosine_kernel(n: usize, d: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
        cosine_kernel(x.view()).unwrap()
    }

    /// Schur complement by plain Gaussian elimination on `[K_SS | K_SU]`.
    fn schur_by_elimination(k: &SymMatrix, s: &[usize]) -> Array2<f64> {
        let n = k.dim();
        let u: Vec<usize> = (0..n).filter(|i| !s.contains(i)).collect();
        let (ms, mu) = (s.len(), u.len());
        let mut aug = Array2::<f64>::zeros((ms, ms + mu));
        for (r, &i) in s.iter().enumerate() {
            for (c, &j) in s.iter().enumerate() {
                aug[[r, c]] = k.get(i, j);
            }
            for (c, &j) in u.iter().enumerate() {
                aug[[r, ms + c]] = k.get(i, j);
            }
        }
        for p in 0..ms {
            let piv = aug[[p, p]];
            for c in 0..ms + mu {
                aug[[p, c]] /= piv;
            }
            for r in 0..ms {
                if r != p {
                    let f = aug[[r, p]];
                    for c in 0..ms + mu {
                        aug[[r, c]] -= f * aug[[p, c]];
                    }
                }
            }
        }
        Array2::from_shape_fn((mu, mu), |(a, b)| {
            let kus_x: f64 = (0..ms).map(|r| k.get(u[a], s[r]) * aug[[r, ms + b]]).sum();
            k.get(u[a], u[b]) - kus_x
        })
    }

    #[test]
    fn cosine_kernel_cases() {
        let k = cosine_kernel(array![[1.0, 2.0], [1.0, 2.0], [-2.0, 1.0]].view()).unwrap();
        assert!((k.get(0, 1) - 1.0).abs() < 1e-15);
        assert!(k.get(0, 2).abs() < 1e-15);
        let k = cosine_kernel(array![[1.0, 0.0], [1.0, 1.0]].view()).unwrap();
        assert!((k.get(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(k.get(1, 1), 1.0);
        assert_eq!(cosine_kernel(array![[1.0, 0.0], [0.0, 0.0]].view()), Err(SelectionError::ZeroNormRow(1)));
    }

    #[test]
    fn objective_identity_and_blocks() {
        let s = IndexSet::new(vec![0, 1]).unwrap();
        assert_eq!(selection_objective(&SymMatrix::identity(5), &s).unwrap(), 3.0);
        let mut m = Array2::<f64>::eye(4);
        m[[2, 3]] = 0.5;
        m[[3, 2]] = 0.5;
        m[[2, 2]] = 4.0;
        m[[3, 3]] = 9.0;
        m[[0, 1]] = 0.3;
        m[[1, 0]] = 0.3;
        let k = SymMatrix::new(m).unwrap();
        assert!((selection_objective(&k, &s).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn objective_matches_elimination_oracle() {
        let k = random_spd(10, &mut ChaCha8Rng::seed_from_u64(2));
        let s = vec![1, 5, 7];
        let oracle: f64 = schur_by_elimination(&k, &s).diag().iter().map(|v| v.sqrt()).sum();
        let got = selection_objective(&k, &IndexSet::new(s).unwrap()).unwrap();
        assert!((got - oracle).abs() < 1e-10);
    }

    #[test]
    fn inverse_schur_tie_break() {
        let r = select_inverse_schur(&SymMatrix::identity(3), 1).unwrap();
        assert_eq!(r.indices.as_slice(), &[0]);
        assert_eq!(r.method, SelectionMethod::InverseSchur);
    }

    #[test]
    fn inverse_schur_smallest_inverse_diagonal() {
        // K = diag(1/0.5, 1/3, 1/2, 1/0.7), so K⁻¹ has diagonal (0.5, 3, 2, 0.7)
        let k = SymMatrix::from_diag(&[2.0, 1.0 / 3.0, 0.5, 1.0 / 0.7]);
        let r = select_inverse_schur(&k, 2).unwrap();
        assert_eq!(r.indices.as_slice(), &[0, 3]);
    }

    #[test]
    fn inverse_schur_maximises_inverse_trace_of_complement() {
        // the U-block of K⁻¹ is (K/K_SS)⁻¹, so the rule is exact for Tr((K/K_SS)⁻¹)
        for seed in 0..20u64 {
            let k = random_cosine_kernel(9, 12, 300 + seed);
            let ours = select_inverse_schur(&k, 3).unwrap();
            let inv_trace = |s: &IndexSet| invert_spd(&schur_complement(&k, s).unwrap()).unwrap().trace();
            let best = combinations(9, 3)
                .into_iter()
                .map(|c| inv_trace(&IndexSet::new(c).unwrap()))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((inv_trace(&ours.indices) - best).abs() <= 1e-9 * best);
            let exhaustive = select_exhaustive(&k, 3).unwrap();
            assert!(ours.objective >= exhaustive.objective - 1e-12);
        }
    }

    #[test]
    fn greedy_equals_exhaustive_at_one() {
        let k = random_spd(9, &mut ChaCha8Rng::seed_from_u64(4));
        let g = select_greedy(&k, 1).unwrap();
        let e = select_exhaustive(&k, 1).unwrap();
        assert_eq!(g.indices, e.indices);
        assert_eq!(g.objective, e.objective);
    }

    #[test]
    fn identity_kernel_objectives() {
        for m in 1..5 {
            assert_eq!(select_greedy(&SymMatrix::identity(6), m).unwrap().objective, (6 - m) as f64);
        }
        let e = select_exhaustive(&SymMatrix::identity(4), 1).unwrap();
        assert_eq!(e.indices.as_slice(), &[0]);
    }

    #[test]
    fn exhaustive_single_exclusion() {
        // m = n - 1: the objective is √ of the excluded point's conditional variance
        let k = random_spd(6, &mut ChaCha8Rng::seed_from_u64(8));
        let e = select_exhaustive(&k, 5).unwrap();
        let inv = invert_spd(&k).unwrap();
        let excluded = (0..6).find(|i| !e.indices.contains(*i)).unwrap();
        // K/K_SS for a single left-out point is 1 / (K⁻¹)ᵢᵢ
        let best = (0..6).map(|i| (1.0 / inv.get(i, i)).sqrt()).fold(f64::INFINITY, f64::min);
        assert!((e.objective - best).abs() < 1e-10);
        assert!(((1.0 / inv.get(excluded, excluded)).sqrt() - best).abs() < 1e-10);
    }

    #[test]
    fn exhaustive_guard() {
        let k = SymMatrix::identity(40);
        assert!(matches!(select_exhaustive(&k, 20), Err(SelectionError::TooLarge { .. })));
        assert!(matches!(select_exhaustive(&k, 0), Err(SelectionError::BadCardinality { .. })));
        assert!(matches!(select_inverse_schur(&k, 40), Err(SelectionError::BadCardinality { .. })));
    }

    #[test]
    fn exhaustive_exec_agree() {
        let k = random_cosine_kernel(11, 14, 3);
        let a = select_exhaustive_with(&k, 3, Exec::Sequential).unwrap();
        let b = select_exhaustive_with(&k, 3, Exec::Parallel).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn combination_enumeration() {
        let all = combinations(6, 3);
        assert_eq!(all.len() as u128, binomial(6, 3));
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(binomial(12, 4), 495);
    }

    #[test]
    fn facility_cases() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push([1.0, 0.01 * i as f64]);
            pts.push([-1.0, -0.01 * i as f64]);
        }
        let x = Array2::from_shape_fn((10, 2), |(i, j)| pts[i][j]);
        let s = select_facility_location(x.view(), 2).unwrap();
        let signs: Vec<f64> = s.as_slice().iter().map(|&i| x[[i, 0]]).collect();
        assert!(signs[0] * signs[1] < 0.0);
        let all = select_facility_location(x.view(), 10).unwrap();
        assert_eq!(all.as_slice(), (0..10).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn facility_two_approximation() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((12, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let greedy = select_facility_location(x.view(), 4).unwrap();
            let r_greedy = covering_radius(x.view(), greedy.as_slice()).unwrap();
            let r_opt = combinations(12, 4)
                .iter()
                .map(|c| covering_radius(x.view(), c).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(r_greedy <= 2.0 * r_opt + 1e-12);
        }
    }

    #[test]
    fn random_selection() {
        assert_eq!(select_random(5, 5, 1).unwrap().as_slice(), &[0, 1, 2, 3, 4]);
        assert_eq!(select_random(50, 7, 9).unwrap(), select_random(50, 7, 9).unwrap());
        let mut hits = 0usize;
        for seed in 0..10_000 {
            if select_random(20, 5, seed).unwrap().contains(3) {
                hits += 1;
            }
        }
        // binomial(10000, 0.25): std ≈ 43.3, allow 4σ
        assert!((hits as f64 - 2500.0).abs() < 4.0 * 43.3, "hits = {hits}");
    }

    #[test]
    fn record_round_trip() {
        let r = SelectionResult {
            indices: IndexSet::new(vec![3, 1, 9]).unwrap(),
            objective: 1.234_567_890_123,
            method: SelectionMethod::Facility,
            runtime: 0.5,
        };
        assert_eq!(SelectionResult::from_record(&r.to_record()).unwrap(), r);
        assert!(SelectionResult::from_record("method random\nm 2\nindices 1\n").is_err());
    }

    #[test]
    fn loewner_identity_holds() {
        let rep = check_loewner_lemma(&SymMatrix::identity(4), 1).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.subsets_checked, 4);
    }

    #[test]
    fn loewner_comparable_pair() {
        // complement of {2,3} is diag(1,2), of {0,1} is diag(3,4): comparable,
        // and the inverse-trace maximiser must be the smaller one
        let k = SymMatrix::from_diag(&[1.0, 2.0, 3.0, 4.0]);
        let rep = check_loewner_lemma(&k, 2).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.maximizer.as_slice(), &[2, 3]);
        assert!(rep.dominating >= 1);
    }

    #[test]
    fn loewner_random_sweep() {
        for seed in 0..20 {
            let k = random_cosine_kernel(10, 12, 500 + seed);
            assert!(check_loewner_lemma(&k, 3).unwrap().holds);
        }
    }

    #[test]
    fn facility_zero_row() {
        let x = array![[1.0, 0.0], [0.0, 0.0]];
        assert_eq!(select_facility_location(x.view(), 1), Err(SelectionError::ZeroNormRow(1)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn objective_two_routes_agree(seed in 0u64..5000, n in 4usize..11) {
            let k = random_cosine_kernel(n, n + 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.gen_range(1..n);
            let s = select_random(n, m, seed).unwrap();
            let direct = selection_objective(&k, &s).unwrap();
            let block = invert_spd(&k).unwrap().principal(&s.complement(n));
            let via_inverse = trace_elementwise_sqrt(&invert_spd(&block).unwrap()).unwrap();
            prop_assert!((direct - via_inverse).abs() < 1e-6);
        }

        #[test]
        fn inverse_schur_permutation_invariant(seed in 0u64..5000) {
            let n = 9;
            let k = random_cosine_kernel(n, 12, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
            let kp = k.permuted(&perm);
            let a = select_inverse_schur(&k, 3).unwrap();
            let b = select_inverse_schur(&kp, 3).unwrap();
            let mapped = IndexSet::new(b.indices.as_slice().iter().map(|&i| perm[i]).collect()).unwrap();
            prop_assert_eq!(a.indices, mapped);
            prop_assert!((a.objective - b.objective).abs() < 1e-9);
        }

        #[test]
        fn never_beats_exhaustive(seed in 0u64..5000) {
            let k = random_cosine_kernel(10, 12, seed);
            let best = select_exhaustive(&k, 3).unwrap().objective;
            prop_assert!(select_greedy(&k, 3).unwrap().objective >= best - 1e-12);
            prop_assert!(select_inverse_schur(&k, 3).unwrap().objective >= best - 1e-12);
        }

        #[test]
        fn exhaustive_monotone_in_m(seed in 0u64..5000) {
            let k = random_cosine_kernel(8, 10, seed);
            let objs: Vec<f64> = (1..8).map(|m| select_exhaustive(&k, m).unwrap().objective).collect();
            prop_assert!(objs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn two_routes_on_spd() {
        let k = random_spd(12, &mut ChaCha8Rng::seed_from_u64(77));
        let s = IndexSet::new(vec![0, 3, 6]).unwrap();
        let sc = schur_complement(&k, &s).unwrap();
        let oracle = schur_by_elimination(&k, s.as_slice());
        assert!(relative_frobenius(sc.view(), oracle.view()) < 1e-12);
    }
}
