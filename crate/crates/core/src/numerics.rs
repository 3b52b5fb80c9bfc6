//! Dense linear algebra on small and medium symmetric matrices.
//!
//! Everything SPD goes through a Cholesky factor. When the first factorisation
//! hits a non-positive pivot, a diagonal jitter of `1e-10 * mean(diag)` is added
//! and the factorisation retried once; cosine kernels over near-duplicate
//! customers are numerically singular and need this.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const SYMMETRY_TOL: f64 = 1e-12;
const JITTER_SCALE: f64 = 1e-10;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot} failed after jitter)")]
    NotPositiveDefinite { pivot: usize },
    #[error("index set leaves no complement in a {n}x{n} matrix")]
    EmptyComplement { n: usize },
    #[error("index set is empty")]
    EmptySelection,
    #[error("diagonal entry {index} is negative ({value})")]
    NegativeDiagonal { index: usize, value: f64 },
    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("data is not finite")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// A dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    /// Wraps `data` after checking it is square and symmetric.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(NumericsError::ShapeMismatch(format!("{r}x{c} is not square")));
        }
        for i in 0..r {
            for j in (i + 1)..r {
                let (a, b) = (data[[i, j]], data[[j, i]]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(NumericsError::NonFinite);
                }
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { data })
    }

    /// Builds a symmetric matrix from `(A + Aᵀ) / 2`.
    pub fn symmetrized(data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(NumericsError::ShapeMismatch(format!("{r}x{c} is not square")));
        }
        let sym = (&data + &data.t()) * 0.5;
        Ok(Self { data: sym })
    }

    pub fn identity(n: usize) -> Self {
        Self { data: Array2::eye(n) }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self { data: Array2::from_diag(&Array1::from(diag.to_vec())) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn diag(&self) -> Array1<f64> {
        self.data.diag().to_owned()
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }

    /// Principal submatrix on `rows` (in the given order).
    pub fn principal(&self, rows: &[usize]) -> SymMatrix {
        SymMatrix { data: take_block(&self.data.view(), rows, rows) }
    }

    /// Simultaneous row/column permutation: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> SymMatrix {
        self.principal(perm)
    }
}

/// Sorted, duplicate-free set of indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct IndexSet(pub(crate) Vec<usize>);

impl IndexSet {
    /// Sorts `indices`; duplicates are rejected.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(NumericsError::DuplicateIndex(w[0]));
        }
        Ok(Self(indices))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Indices of `0..n` not in the set, ascending.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n.saturating_sub(self.len()));
        let mut it = self.0.iter().peekable();
        for i in 0..n {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }

    /// Checks every index is below `n`.
    pub fn check_bounds(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= n => Err(NumericsError::IndexOutOfRange { index: last, n }),
            _ => Ok(()),
        }
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(s: IndexSet) -> Self {
        s.0
    }
}

fn take_block(m: &ArrayView2<f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m[[rows[i], cols[j]]])
}

/// In-place Cholesky of the lower triangle. Returns the failing pivot index.
fn factor_lower(a: &mut Array2<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let ljj = d.sqrt();
        a[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / ljj;
        }
        for i in 0..j {
            a[[i, j]] = 0.0;
        }
    }
    Ok(())
}

/// Lower Cholesky factor plus the diagonal jitter that was needed, if any.
#[derive(Debug, Clone)]
pub struct Cholesky {
    pub factor: Array2<f64>,
    pub jitter: f64,
}

impl Cholesky {
    pub fn new(m: &SymMatrix) -> Result<Self> {
        let mut a = m.data.clone();
        match factor_lower(&mut a) {
            Ok(()) => Ok(Self { factor: a, jitter: 0.0 }),
            Err(first) => {
                let n = m.dim();
                let mean_diag = m.data.diag().sum() / n as f64;
                let jitter = JITTER_SCALE * mean_diag;
                if !(jitter > 0.0) {
                    return Err(NumericsError::NotPositiveDefinite { pivot: first });
                }
                let mut a = m.data.clone();
                for i in 0..n {
                    a[[i, i]] += jitter;
                }
                factor_lower(&mut a).map_err(|pivot| NumericsError::NotPositiveDefinite { pivot })?;
                log::debug!("cholesky needed jitter {jitter:e} (pivot {first} failed)");
                Ok(Self { factor: a, jitter })
            }
        }
    }

    /// Solves `L X = B`.
    pub fn solve_lower(&self, b: &Array2<f64>) -> Array2<f64> {
        forward_substitute(&self.factor, b)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.factor.nrows();
        let l_inv = forward_substitute(&self.factor, &Array2::eye(n));
        let inv = l_inv.t().dot(&l_inv);
        SymMatrix { data: (&inv + &inv.t()) * 0.5 }
    }
}

fn forward_substitute(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut v = x[[i, c]];
            for k in 0..i {
                v -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = v / l[[i, i]];
        }
    }
    x
}

/// Lower-triangular `L` with `L Lᵀ = m`.
pub fn cholesky(m: &SymMatrix) -> Result<Array2<f64>> {
    Cholesky::new(m).map(|c| c.factor)
}

pub fn invert_spd(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(Cholesky::new(m)?.inverse())
}

/// `K/K_SS = K_UU - K_US K_SS⁻¹ K_SU`, with `U` the complement of `s` in
/// ascending order.
pub fn schur_complement(m: &SymMatrix, s: &IndexSet) -> Result<SymMatrix> {
    let n = m.dim();
    if s.is_empty() {
        return Err(NumericsError::EmptySelection);
    }
    s.check_bounds(n)?;
    let u = s.complement(n);
    if u.is_empty() {
        return Err(NumericsError::EmptyComplement { n });
    }
    let view = m.view();
    let k_ss = SymMatrix { data: take_block(&view, s.as_slice(), s.as_slice()) };
    let k_su = take_block(&view, s.as_slice(), &u);
    let k_uu = take_block(&view, &u, &u);
    let chol = Cholesky::new(&k_ss)?;
    let w = chol.solve_lower(&k_su);
    let out = k_uu - w.t().dot(&w);
    Ok(SymMatrix { data: (&out + &out.t()) * 0.5 })
}

/// `Σᵢ √mᵢᵢ`; tiny negative diagonals (≥ -1e-12) clamp to zero.
pub fn trace_elementwise_sqrt(m: &SymMatrix) -> Result<f64> {
    let mut acc = 0.0;
    for (i, &v) in m.data.diag().iter().enumerate() {
        if v < -1e-12 {
            return Err(NumericsError::NegativeDiagonal { index: i, value: v });
        }
        acc += v.max(0.0).sqrt();
    }
    Ok(acc)
}

/// Natural log-determinant.
pub fn log_det_spd(m: &SymMatrix) -> Result<f64> {
    Ok(Cholesky::new(m)?.log_det())
}

/// `‖a - b‖_F / ‖b‖_F`.
pub fn relative_frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let diff = (&a - &b).mapv(|v| v * v).sum().sqrt();
    let norm = b.mapv(|v| v * v).sum().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Eigenvalues (ascending) and eigenvectors (columns) by cyclic Jacobi sweeps.
///
/// Cubic per sweep; only meant for the small matrices of the Loewner checks
/// and for test oracles.
pub fn symmetric_eigen(m: &SymMatrix) -> (Vec<f64>, Array2<f64>) {
    let n = m.dim();
    let mut a = m.data.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        let scale: f64 = a.diag().iter().map(|x| x * x).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

pub fn min_eigenvalue(m: &SymMatrix) -> f64 {
    symmetric_eigen(m).0.first().copied().unwrap_or(0.0)
}

/// Output of [`pca_project`].
#[derive(Debug, Clone)]
pub struct Pca {
    /// Centered rows projected onto the components, `rows x k`.
    pub projected: Array2<f64>,
    /// Unit components as rows, `k x d`. Rows past `rank` are zero.
    pub components: Array2<f64>,
    /// Variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub mean: Array1<f64>,
    /// Number of non-degenerate components found (≤ k).
    pub rank: usize,
}

impl Pca {
    pub fn is_degenerate(&self) -> bool {
        self.rank < self.components.nrows()
    }
}

/// Projects rows onto the top-`k` principal components of their sample
/// covariance, found by power iteration with deflation.
///
/// When the covariance has rank below `k` the missing components are zero and
/// `rank` reports how many were found.
pub fn pca_project(data: ArrayView2<f64>, k: usize) -> Result<Pca> {
    let (rows, d) = data.dim();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite);
    }
    if k > rows || k > d {
        return Err(NumericsError::ShapeMismatch(format!(
            "cannot take {k} components of {rows}x{d} data"
        )));
    }
    let mean = if rows > 0 { data.mean_axis(Axis(0)).unwrap() } else { Array1::zeros(d) };
    let centered = &data - &mean.view().insert_axis(Axis(0));
    let denom = (rows.max(2) - 1) as f64;
    let cov = centered.t().dot(&centered) / denom;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f9c);
    let mut components = Array2::<f64>::zeros((k, d));
    let mut explained = Vec::with_capacity(k);
    let mut rank = 0;
    let top_scale = cov.diag().iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for c in 0..k {
        let mut v: Array1<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
        orthogonalize(&mut v, &components.slice(s![..c, ..]));
        if normalize(&mut v) == 0.0 {
            break;
        }
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITER {
            let mut w = cov.dot(&v);
            orthogonalize(&mut w, &components.slice(s![..c, ..]));
            lambda = normalize(&mut w);
            if lambda <= 1e-12 * top_scale {
                lambda = 0.0;
                break;
            }
            let delta = (&w - &v).mapv(|x| x * x).sum().sqrt();
            v = w;
            if delta < POWER_TOL {
                break;
            }
        }
        if lambda == 0.0 {
            break;
        }
        let rayleigh = v.dot(&cov.dot(&v));
        components.row_mut(c).assign(&v);
        explained.push(rayleigh);
        rank += 1;
    }
    explained.resize(k, 0.0);
    let projected = centered.dot(&components.t());
    Ok(Pca { projected, components, explained_variance: explained, mean, rank })
}

fn orthogonalize(v: &mut Array1<f64>, basis: &ArrayView2<f64>) {
    for b in basis.rows() {
        let p = v.dot(&b);
        v.scaled_add(-p, &b);
    }
}

fn normalize(v: &mut Array1<f64>) -> f64 {
    let norm = v.dot(v).sqrt();
    if norm > 0.0 {
        v.mapv_inplace(|x| x / norm);
    }
    norm
}

/// Cosine similarity of two vectors; `None` when either has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(a.dot(&b) / (na * nb))
    }
}

/// Random SPD test matrix `A Aᵀ + n·I` scaled to unit mean diagonal.
pub fn random_spd(n: usize, rng: &mut impl Rng) -> SymMatrix {
    let a = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>() * 2.0 - 1.0);
    let mut m = a.dot(&a.t());
    for i in 0..n {
        m[[i, i]] += n as f64 * 0.1;
    }
    let scale = m.diag().sum() / n as f64;
    SymMatrix::symmetrized(m / scale).expect("square")
}
