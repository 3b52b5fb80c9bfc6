//! Entropy bound expressions for standardised feeder voltages.
//!
//! All quantities are in nats internally; `*_bits` fields and
//! [`nats_to_bits`] exist only for reporting.

use std::f64::consts::{E, LN_2, PI};
use std::fmt::Write as _;

use thiserror::Error;

use crate::numerics::{log_det_spd, schur_complement, trace_elementwise_sqrt, IndexSet, NumericsError, SymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("value {value} out of range: {what}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("diagonal entry {0} is not positive")]
    ZeroDiagonal(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

/// Per-customer entropy bounds in nats for an `n`-customer feeder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyBounds {
    pub lower: f64,
    pub upper: f64,
}

impl EntropyBounds {
    pub fn lower_bits(&self) -> f64 {
        nats_to_bits(self.lower)
    }

    pub fn upper_bits(&self) -> f64 {
        nats_to_bits(self.upper)
    }

    pub fn contains(&self, value: f64, slack: f64) -> bool {
        value >= self.lower - slack && value <= self.upper + slack
    }
}

/// `lower = ln(e/n) − (1/n)·ln(√(2π/e²)/(n+1))`,
/// `upper = ½·ln(12e/n) − (1/n)·ln(√(e²/4π)/(n+1))`.
pub fn lemma3_bounds(n: usize) -> Result<EntropyBounds, EntropyError> {
    if n < 2 {
        return Err(EntropyError::OutOfRange { what: "n must be at least 2", value: n as f64 });
    }
    let nf = n as f64;
    let lower = (E / nf).ln() - ((2.0 * PI / (E * E)).sqrt() / (nf + 1.0)).ln() / nf;
    let upper = 0.5 * (12.0 * E / nf).ln() - ((E * E / (4.0 * PI)).sqrt() / (nf + 1.0)).ln() / nf;
    Ok(EntropyBounds { lower, upper })
}

/// `DΣD` with `D = diag(1/√Σᵢᵢ)`.
pub fn scale_to_unit_diagonal(sigma: &SymMatrix) -> Result<SymMatrix, EntropyError> {
    let n = sigma.dim();
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let v = sigma.get(i, i);
        if !(v > 0.0) {
            return Err(EntropyError::ZeroDiagonal(i));
        }
        d.push(1.0 / v.sqrt());
    }
    let mut out = sigma.as_array().clone();
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] *= d[i] * d[j];
        }
        out[[i, i]] = 1.0;
    }
    Ok(SymMatrix::symmetrized(out)?)
}

/// Differential entropy of `N(0, Σ)`: `½ (n ln(2πe) + ln det Σ)`.
pub fn gaussian_entropy(sigma: &SymMatrix) -> Result<f64, EntropyError> {
    let n = sigma.dim() as f64;
    Ok(0.5 * (n * (2.0 * PI * E).ln() + log_det_spd(sigma)?))
}

fn binary_entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// `h₂(pₑ) + pₑ log₂(|Y| − 1)` in bits.
pub fn fano_expression(p_e: f64, n_classes: usize) -> Result<f64, EntropyError> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(EntropyError::OutOfRange { what: "error probability", value: p_e });
    }
    if n_classes < 2 {
        return Err(EntropyError::OutOfRange { what: "class count", value: n_classes as f64 });
    }
    Ok(binary_entropy_bits(p_e) + p_e * ((n_classes - 1) as f64).log2())
}

/// `(p_y / n) · Trace √(K/K_SS)`, the kernel part of the total-variation bound.
pub fn delta_bound_term(k: &SymMatrix, s: &IndexSet, p_y: f64) -> Result<f64, EntropyError> {
    if !(0.0..=1.0).contains(&p_y) {
        return Err(EntropyError::OutOfRange { what: "class probability", value: p_y });
    }
    let trace = trace_elementwise_sqrt(&schur_complement(k, s)?)?;
    Ok(p_y / k.dim() as f64 * trace)
}

/// Entropy figures for one feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub n: usize,
    pub bounds: EntropyBounds,
    /// Entropy of the unit-diagonal covariance, nats, whole vector.
    pub gaussian_entropy: Option<f64>,
    pub notes: Vec<String>,
}

impl EntropyReport {
    pub fn from_bounds(n: usize) -> Result<Self, EntropyError> {
        Ok(Self { n, bounds: lemma3_bounds(n)?, gaussian_entropy: None, notes: Vec::new() })
    }

    /// Adds the Gaussian entropy of `sigma` after scaling to unit diagonal.
    pub fn with_covariance(mut self, sigma: &SymMatrix) -> Result<Self, EntropyError> {
        let scaled = scale_to_unit_diagonal(sigma)?;
        self.gaussian_entropy = Some(gaussian_entropy(&scaled)?);
        Ok(self)
    }

    pub fn per_customer_entropy(&self) -> Option<f64> {
        self.gaussian_entropy.map(|h| h / self.n as f64)
    }

    /// Flat `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "lower_nats = {}", self.bounds.lower);
        let _ = writeln!(s, "upper_nats = {}", self.bounds.upper);
        let _ = writeln!(s, "lower_bits = {}", self.bounds.lower_bits());
        let _ = writeln!(s, "upper_bits = {}", self.bounds.upper_bits());
        if let Some(h) = self.gaussian_entropy {
            let per = h / self.n as f64;
            let _ = writeln!(s, "gaussian_entropy_nats = {h}");
            let _ = writeln!(s, "gaussian_entropy_per_customer_nats = {per}");
            let _ = writeln!(s, "gaussian_entropy_per_customer_bits = {}", nats_to_bits(per));
        }
        for (i, note) in self.notes.iter().enumerate() {
            let _ = writeln!(s, "note{i} = {note}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random_spd;
    use crate::selection::{select_exhaustive, select_random, selection_objective};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounds_at_5000() {
        let b = lemma3_bounds(5000).unwrap();
        // direct evaluation: ln(e/5000) = 1 - ln 5000 etc.
        let ln5000 = 5000f64.ln();
        let lower = 1.0 - ln5000 - ((2.0 * PI).sqrt() / E / 5001.0).ln() / 5000.0;
        let upper = 0.5 * ((12.0 * E).ln() - ln5000) - (E / (4.0 * PI).sqrt() / 5001.0).ln() / 5000.0;
        assert!((b.lower - lower).abs() < 1e-12);
        assert!((b.upper - upper).abs() < 1e-12);
        assert!((b.lower - -7.51547).abs() < 1e-4, "{}", b.lower);
        assert!((b.upper - -2.51439).abs() < 1e-4, "{}", b.upper);
        assert!((b.lower_bits() - -10.85).abs() <= 0.01);
        assert!((b.upper_bits() - -3.62).abs() <= 0.01);
    }

    #[test]
    fn bounds_monotone_and_ordered() {
        assert!(lemma3_bounds(5000).unwrap().upper < lemma3_bounds(500).unwrap().upper);
        let mut n = 2.0f64;
        while n <= 1e6 {
            let b = lemma3_bounds(n as usize).unwrap();
            assert!(b.lower < b.upper, "n = {n}");
            n *= 1.5;
        }
        assert!(lemma3_bounds(1).is_err());
    }

    #[test]
    fn unit_diagonal_scaling() {
        assert_eq!(scale_to_unit_diagonal(&SymMatrix::identity(3)).unwrap(), SymMatrix::identity(3));
        assert_eq!(scale_to_unit_diagonal(&SymMatrix::from_diag(&[4.0, 9.0])).unwrap(), SymMatrix::identity(2));
        // var 4 and 9, covariance 3 → correlation 3 / (2·3) = 0.5
        let s = SymMatrix::new(array![[4.0, 3.0], [3.0, 9.0]]).unwrap();
        assert!((scale_to_unit_diagonal(&s).unwrap().get(0, 1) - 0.5).abs() < 1e-15);
        assert!(matches!(
            scale_to_unit_diagonal(&SymMatrix::from_diag(&[0.0, 1.0])),
            Err(EntropyError::ZeroDiagonal(0))
        ));
    }

    #[test]
    fn gaussian_entropy_cases() {
        let unit = 0.5 * (2.0 * PI * E).ln();
        assert!((unit - 1.418_938_533).abs() < 1e-9);
        assert!((gaussian_entropy(&SymMatrix::identity(1)).unwrap() - unit).abs() < 1e-15);
        assert!((gaussian_entropy(&SymMatrix::identity(6)).unwrap() - 6.0 * unit).abs() < 1e-12);
        let rho: f64 = 0.9999;
        let s = SymMatrix::new(array![[1.0, rho], [rho, 1.0]]).unwrap();
        let closed = unit * 2.0 + 0.5 * (1.0 - rho * rho).ln();
        let h = gaussian_entropy(&s).unwrap();
        assert!((h - closed).abs() < 1e-10);
        assert!(h < 2.0 * unit - 3.0);
    }

    #[test]
    fn fano_cases() {
        assert_eq!(fano_expression(0.0, 4).unwrap(), 0.0);
        assert_eq!(fano_expression(0.5, 2).unwrap(), 1.0);
        assert!((fano_expression(0.5, 5).unwrap() - 2.0).abs() < 1e-15);
        assert!(fano_expression(1.5, 3).is_err());
        assert!(fano_expression(0.5, 1).is_err());
    }

    #[test]
    fn delta_term_cases() {
        let s = IndexSet::new(vec![1, 4]).unwrap();
        assert!((delta_bound_term(&SymMatrix::identity(6), &s, 1.0).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(delta_bound_term(&SymMatrix::identity(6), &s, 0.0).unwrap(), 0.0);
        assert!(delta_bound_term(&SymMatrix::identity(6), &s, 1.5).is_err());
    }

    #[test]
    fn delta_term_exhaustive_beats_random() {
        for seed in 0..10u64 {
            let k = random_spd(10, &mut ChaCha8Rng::seed_from_u64(seed));
            let best = select_exhaustive(&k, 3).unwrap().indices;
            let rand = select_random(10, 3, seed).unwrap();
            assert!(
                delta_bound_term(&k, &best, 0.5).unwrap() <= delta_bound_term(&k, &rand, 0.5).unwrap() + 1e-15
            );
            assert!((selection_objective(&k, &best).unwrap() * 0.05 - delta_bound_term(&k, &best, 0.5).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn report_text() {
        let r = EntropyReport::from_bounds(10).unwrap().with_covariance(&SymMatrix::identity(10)).unwrap();
        let text = r.to_text();
        assert!(text.contains("n = 10\n"));
        assert!(text.contains("gaussian_entropy_per_customer_nats"));
        assert!((r.per_customer_entropy().unwrap() - 1.4189385332).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn hadamard_max_entropy(seed in 0u64..10_000, n in 1usize..9) {
            let s = random_spd(n, &mut ChaCha8Rng::seed_from_u64(seed));
            let unit = scale_to_unit_diagonal(&s).unwrap();
            let h = gaussian_entropy(&unit).unwrap();
            prop_assert!(h <= gaussian_entropy(&SymMatrix::identity(n)).unwrap() + 1e-12);
        }

        #[test]
        fn delta_term_monotone_and_permutation_invariant(seed in 0u64..10_000, p in 0.0f64..0.5) {
            let k = random_spd(8, &mut ChaCha8Rng::seed_from_u64(seed));
            let s = select_random(8, 3, seed).unwrap();
            let lo = delta_bound_term(&k, &s, p).unwrap();
            let hi = delta_bound_term(&k, &s, p + 0.5).unwrap();
            prop_assert!(lo <= hi);
            let perm: Vec<usize> = (0..8).rev().collect();
            let kp = k.permuted(&perm);
            // new index i holds old perm[i]; old j sits at the position holding it
            let sp = IndexSet::new(s.as_slice().iter().map(|&j| perm.iter().position(|&x| x == j).unwrap()).collect()).unwrap();
            let permuted = delta_bound_term(&kp, &sp, p).unwrap();
            prop_assert!((permuted - lo).abs() < 1e-10);
        }
    }
}
