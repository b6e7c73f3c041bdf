//! Least-squares projection machinery for the Monte Carlo backward solvers.
//!
//! A regression step assembles the Gram matrix of a feature set once and
//! projects any number of target vectors onto it. Near-dependent columns are
//! dropped instead of failing, so degenerate bundles (deterministic forward
//! state, constant terminal) still fit; a hard rank deficiency (fewer paths
//! than features, or no usable column) is an error.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Polynomial basis in a single scalar state, standardized per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyBasis {
    pub degree: usize,
}

impl Default for PolyBasis {
    fn default() -> Self {
        Self { degree: 3 }
    }
}

impl PolyBasis {
    pub fn dim(&self) -> usize {
        self.degree + 1
    }
}

/// Fills `out` with monomials of `vars` up to `degree` total degree.
/// `degree` 0 yields only the constant.
pub fn monomials(vars: &[f64], degree: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if degree == 0 {
        return;
    }
    let mut prev_start = 0usize;
    let mut prev_end = 1usize;
    let mut var_floor = vec![0usize; 1];
    for _ in 1..=degree {
        let start = out.len();
        for idx in prev_start..prev_end {
            for (v, &value) in vars.iter().enumerate().skip(var_floor[idx]) {
                out.push(out[idx] * value);
                var_floor.push(v);
            }
        }
        prev_start = start;
        prev_end = out.len();
    }
}

/// Number of monomials of `n_vars` variables up to total degree `degree`.
pub fn monomial_count(n_vars: usize, degree: usize) -> usize {
    // C(n_vars + degree, degree)
    let mut num = 1usize;
    let mut den = 1usize;
    for i in 1..=degree {
        num *= n_vars + i;
        den *= i;
    }
    num / den
}

/// A fitted projection onto one feature set: solves the normal equations
/// once and serves fitted values for many targets.
#[derive(Debug)]
pub struct RegressionStep {
    features: Vec<f64>, // row-major: n_paths x dim
    n_paths: usize,
    dim: usize,
    /// Inverse-free representation: pivoted LDL factor of the Gram matrix
    /// with dropped columns marked.
    chol: Vec<f64>,
    kept: Vec<bool>,
}

const BLOCK: usize = 2048;
const DROP_TOL: f64 = 1e-12;

impl RegressionStep {
    /// Assembles features (caller-filled, row-major) and factors the Gram
    /// matrix. `step` is only used for error reporting.
    pub fn new(features: Vec<f64>, n_paths: usize, dim: usize, step: usize) -> Result<Self> {
        assert_eq!(features.len(), n_paths * dim);
        if n_paths < dim {
            return Err(Error::IllConditionedBasis {
                step,
                detail: format!("{n_paths} paths for {dim} basis functions"),
            });
        }
        for &v in &features {
            if !v.is_finite() {
                return Err(Error::NumericError(format!(
                    "non-finite regression feature at step {step}"
                )));
            }
        }
        // Blockwise Gram assembly with a fixed reduction order, so results
        // do not depend on the rayon thread count.
        let n_blocks = n_paths.div_ceil(BLOCK);
        let partials: Vec<Vec<f64>> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let lo = b * BLOCK;
                let hi = ((b + 1) * BLOCK).min(n_paths);
                let mut g = vec![0.0f64; dim * dim];
                for j in lo..hi {
                    let row = &features[j * dim..(j + 1) * dim];
                    for a in 0..dim {
                        for c in a..dim {
                            g[a * dim + c] += row[a] * row[c];
                        }
                    }
                }
                g
            })
            .collect();
        let mut gram = vec![0.0f64; dim * dim];
        for g in &partials {
            for (dst, src) in gram.iter_mut().zip(g) {
                *dst += src;
            }
        }
        for a in 0..dim {
            for c in 0..a {
                gram[a * dim + c] = gram[c * dim + a];
            }
        }

        // LDL-style Cholesky with column dropping for near-dependence.
        let max_diag = (0..dim)
            .map(|a| gram[a * dim + a])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut chol = vec![0.0f64; dim * dim];
        let mut kept = vec![true; dim];
        for a in 0..dim {
            let mut d = gram[a * dim + a];
            for k in 0..a {
                if kept[k] {
                    d -= chol[a * dim + k] * chol[a * dim + k];
                }
            }
            if d <= DROP_TOL * max_diag {
                kept[a] = false;
                continue;
            }
            let d = d.sqrt();
            chol[a * dim + a] = d;
            for r in (a + 1)..dim {
                let mut v = gram[r * dim + a];
                for k in 0..a {
                    if kept[k] {
                        v -= chol[r * dim + k] * chol[a * dim + k];
                    }
                }
                chol[r * dim + a] = v / d;
            }
        }
        if !kept.iter().any(|&k| k) {
            return Err(Error::IllConditionedBasis {
                step,
                detail: "no usable basis column".into(),
            });
        }
        Ok(Self {
            features,
            n_paths,
            dim,
            chol,
            kept,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Regression coefficients of `target` on the features (dropped columns
    /// get coefficient zero).
    pub fn coefficients(&self, target: &[f64]) -> Vec<f64> {
        assert_eq!(target.len(), self.n_paths);
        let dim = self.dim;
        let mut rhs = vec![0.0f64; dim];
        let n_blocks = self.n_paths.div_ceil(BLOCK);
        let partials: Vec<Vec<f64>> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let lo = b * BLOCK;
                let hi = ((b + 1) * BLOCK).min(self.n_paths);
                let mut r = vec![0.0f64; dim];
                for j in lo..hi {
                    let row = &self.features[j * dim..(j + 1) * dim];
                    let t = target[j];
                    for a in 0..dim {
                        r[a] += row[a] * t;
                    }
                }
                r
            })
            .collect();
        for p in &partials {
            for (dst, src) in rhs.iter_mut().zip(p) {
                *dst += src;
            }
        }
        // forward substitution L y = rhs over kept columns
        let mut y = vec![0.0f64; dim];
        for a in 0..dim {
            if !self.kept[a] {
                continue;
            }
            let mut v = rhs[a];
            for k in 0..a {
                if self.kept[k] {
                    v -= self.chol[a * dim + k] * y[k];
                }
            }
            y[a] = v / self.chol[a * dim + a];
        }
        // back substitution L^T c = y
        let mut c = vec![0.0f64; dim];
        for a in (0..dim).rev() {
            if !self.kept[a] {
                continue;
            }
            let mut v = y[a];
            for k in (a + 1)..dim {
                if self.kept[k] {
                    v -= self.chol[k * dim + a] * c[k];
                }
            }
            c[a] = v / self.chol[a * dim + a];
        }
        c
    }

    /// Fitted values of `target` (its projection onto the feature span).
    pub fn fit(&self, target: &[f64]) -> Vec<f64> {
        let c = self.coefficients(target);
        self.evaluate(&c)
    }

    /// Evaluates a coefficient vector on every path's features.
    pub fn evaluate(&self, coeffs: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        (0..self.n_paths)
            .into_par_iter()
            .map(|j| {
                let row = &self.features[j * dim..(j + 1) * dim];
                row.iter().zip(coeffs).map(|(f, c)| f * c).sum()
            })
            .collect()
    }

    /// Fit plus the projection-noise scale of the fitted conditional mean:
    /// `rms(residual) * sqrt(dim / n_paths)`.
    pub fn fit_with_error(&self, target: &[f64]) -> (Vec<f64>, f64) {
        let fitted = self.fit(target);
        let ss: f64 = fitted
            .iter()
            .zip(target)
            .map(|(f, t)| (t - f).powi(2))
            .sum();
        let rms = (ss / self.n_paths as f64).sqrt();
        let err = rms * (self.dim as f64 / self.n_paths as f64).sqrt();
        (fitted, err)
    }
}

/// Standardizes a state slice in place to zero mean, unit scale; constant
/// slices become all zeros (the constant basis column carries them).
pub fn standardize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-300 {
        xs.iter_mut().for_each(|x| *x = 0.0);
    } else {
        xs.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn poly_features(xs: &[f64], degree: usize) -> (Vec<f64>, usize) {
        let dim = degree + 1;
        let mut f = Vec::with_capacity(xs.len() * dim);
        for &x in xs {
            let mut p = 1.0;
            for _ in 0..dim {
                f.push(p);
                p *= x;
            }
        }
        (f, dim)
    }

    #[test]
    fn recovers_exact_polynomial() {
        let mut rng = stream_rng(1, 0);
        let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let (f, dim) = poly_features(&xs, 3);
        let step = RegressionStep::new(f, xs.len(), dim, 0).unwrap();
        let c = step.coefficients(&ys);
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!((c[1] + 2.0).abs() < 1e-9);
        assert!((c[2] - 0.5).abs() < 1e-9);
        assert!(c[3].abs() < 1e-9);
        let (_, err) = step.fit_with_error(&ys);
        assert!(err < 1e-9);
    }

    #[test]
    fn degenerate_state_falls_back_to_constant() {
        // all x identical: higher columns are dependent and get dropped
        let xs = vec![2.0; 100];
        let ys = vec![5.0; 100];
        let (f, dim) = poly_features(&xs, 3);
        let step = RegressionStep::new(f, xs.len(), dim, 0).unwrap();
        let fit = step.fit(&ys);
        assert!(fit.iter().all(|v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn too_few_paths_is_rank_deficient() {
        let xs = vec![1.0, 2.0, 3.0];
        let (f, dim) = poly_features(&xs, 3);
        let err = RegressionStep::new(f, xs.len(), dim, 17).unwrap_err();
        match err {
            Error::IllConditionedBasis { step, .. } => assert_eq!(step, 17),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn monomial_enumeration() {
        let mut out = Vec::new();
        monomials(&[2.0, 3.0], 2, &mut out);
        // 1, a, b, a^2, ab, b^2
        assert_eq!(out.len(), monomial_count(2, 2));
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        monomials(&[2.0], 0, &mut out);
        assert_eq!(out, vec![1.0]);
        assert_eq!(monomial_count(3, 2), 10);
        assert_eq!(monomial_count(3, 3), 20);
    }

    #[test]
    fn projection_reduces_noise() {
        let mut rng = stream_rng(2, 0);
        let n = 4000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x * x + 0.3 * rng.random::<f64>())
            .collect();
        let (f, dim) = poly_features(&xs, 2);
        let step = RegressionStep::new(f, n, dim, 0).unwrap();
        let fit = step.fit(&ys);
        // fitted values should track x^2 + 0.15 within noise
        let max_err = xs
            .iter()
            .zip(&fit)
            .map(|(x, v)| (v - (x * x + 0.15)).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 0.05, "max_err {max_err}");
    }

    #[test]
    fn standardize_handles_constant() {
        let mut xs = vec![3.0; 10];
        standardize(&mut xs);
        assert!(xs.iter().all(|&x| x == 0.0));
        let mut ys = vec![1.0, 2.0, 3.0];
        standardize(&mut ys);
        assert!(ys[0] < 0.0 && ys[2] > 0.0);
    }
}
