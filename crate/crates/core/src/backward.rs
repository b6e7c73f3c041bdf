//! Generic least-squares Monte Carlo solver for backward equations with
//! jumps, by explicit backward induction.
//!
//! At each step the engine projects the next value onto caller-supplied
//! basis features, extracts the Brownian loadings from covariance
//! regressions and the per-mark jump loadings from compensated-count
//! regressions, then applies one explicit generator step. The same engine
//! serves the controlled backward equation, the Picard iteration, and every
//! linear adjoint system.

use rayon::prelude::*;

use crate::drivers::Drivers;
use crate::error::{Error, Result};
use crate::regression::RegressionStep;

/// Solved backward bundle, row-major over paths.
#[derive(Debug, Clone)]
pub struct BackwardBundle {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Marks in each train.
    pub k1: usize,
    pub k2: usize,
    /// Values at nodes: `n_paths * (n_steps + 1)`.
    pub y: Vec<f64>,
    /// Brownian loadings per step: `n_paths * n_steps`.
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Jump loadings per step and mark: `n_paths * n_steps * k`.
    pub zt1: Vec<f64>,
    pub zt2: Vec<f64>,
    /// Projection-noise estimate of the value regression, per step.
    pub reg_error: Vec<f64>,
}

impl BackwardBundle {
    pub fn value(&self, j: usize, k: usize) -> f64 {
        self.y[j * (self.n_steps + 1) + k]
    }

    pub fn z1_at(&self, j: usize, k: usize) -> f64 {
        self.z1[j * self.n_steps + k]
    }

    pub fn z2_at(&self, j: usize, k: usize) -> f64 {
        self.z2[j * self.n_steps + k]
    }

    pub fn zt1_at(&self, j: usize, k: usize) -> &[f64] {
        let base = (j * self.n_steps + k) * self.k1;
        &self.zt1[base..base + self.k1]
    }

    pub fn zt2_at(&self, j: usize, k: usize) -> &[f64] {
        let base = (j * self.n_steps + k) * self.k2;
        &self.zt2[base..base + self.k2]
    }

    /// Jump loading integrated against intensity weights.
    pub fn zeta(&self, loadings: &[f64], weights: &[f64]) -> f64 {
        loadings.iter().zip(weights).map(|(z, w)| z * w).sum()
    }

    /// Initial values across paths.
    pub fn initial_values(&self) -> Vec<f64> {
        (0..self.n_paths).map(|j| self.value(j, 0)).collect()
    }

    /// Worst projection-noise estimate across steps.
    pub fn max_reg_error(&self) -> f64 {
        self.reg_error.iter().fold(0.0f64, |a, &b| a.max(b))
    }
}

/// Per-path loadings handed to the generator at one step.
pub struct LoadingView<'a> {
    pub z1: f64,
    pub z2: f64,
    pub zt1: &'a [f64],
    pub zt2: &'a [f64],
}

/// Configuration of the backward solver.
#[derive(Debug, Clone, Copy)]
pub struct BsdepEngine {
    /// Number of basis features the caller's feature builder produces.
    pub n_features: usize,
}

impl BsdepEngine {
    pub fn new(n_features: usize) -> Self {
        Self { n_features }
    }

    /// Solves a backward equation along `drivers`.
    ///
    /// `features(k)` returns the row-major `n_paths x n_features` design
    /// matrix of step `k` (the caller standardizes as needed). `terminal`
    /// holds the per-path terminal values, stored exactly. The generator is
    /// called once per path and step with the projected value and the
    /// extracted loadings and returns the drift to apply over the step.
    pub fn solve(
        &self,
        drivers: &[Drivers],
        features: impl Fn(usize) -> Vec<f64> + Sync,
        terminal: &[f64],
        generator: impl Fn(usize, usize, f64, &LoadingView) -> f64 + Sync,
    ) -> Result<BackwardBundle> {
        let n_paths = drivers.len();
        assert!(n_paths > 0, "empty driver bundle");
        assert_eq!(terminal.len(), n_paths);
        let grid = &drivers[0].grid;
        let n = grid.n_steps();
        let k1 = drivers[0].ms1.len();
        let k2 = drivers[0].ms2.len();

        let mut bundle = BackwardBundle {
            n_paths,
            n_steps: n,
            k1,
            k2,
            y: vec![0.0; n_paths * (n + 1)],
            z1: vec![0.0; n_paths * n],
            z2: vec![0.0; n_paths * n],
            zt1: vec![0.0; n_paths * n * k1],
            zt2: vec![0.0; n_paths * n * k2],
            reg_error: vec![0.0; n],
        };
        for (j, &v) in terminal.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NumericError(format!(
                    "non-finite terminal value on path {j}"
                )));
            }
            bundle.y[j * (n + 1) + n] = v;
        }

        let mut next: Vec<f64> = terminal.to_vec();
        for k in (0..n).rev() {
            let design = features(k);
            let step = RegressionStep::new(design, n_paths, self.n_features, k)?;
            let (fitted, reg_err) = step.fit_with_error(&next);
            bundle.reg_error[k] = reg_err;
            let dt = grid.dt(k);

            // Brownian loadings from martingale-increment regressions of
            // the projection residual (same conditional expectation as the
            // raw product, with the conditional-mean variance removed).
            let resid: Vec<f64> = (0..n_paths).map(|j| next[j] - fitted[j]).collect();
            let target_z = |dw: &dyn Fn(usize) -> f64| -> Vec<f64> {
                (0..n_paths).map(|j| resid[j] * dw(j) / dt).collect()
            };
            let z1 = step.fit(&target_z(&|j| drivers[j].dw1(k)));
            let z2 = step.fit(&target_z(&|j| drivers[j].dw2(k)));

            // Per-mark jump loadings from compensated-count regressions.
            let mut zt1 = vec![0.0; n_paths * k1];
            let mut zt2 = vec![0.0; n_paths * k2];
            for (train, zt, kk) in [(1usize, &mut zt1, k1), (2usize, &mut zt2, k2)] {
                for m in 0..kk {
                    let weight = if train == 1 {
                        drivers[0].ms1.weight(m)
                    } else {
                        drivers[0].ms2.weight(m)
                    };
                    if weight <= 0.0 {
                        continue;
                    }
                    let norm = weight * dt;
                    let target: Vec<f64> = (0..n_paths)
                        .map(|j| {
                            let events = if train == 1 {
                                drivers[j].jumps1.in_step(k)
                            } else {
                                drivers[j].jumps2.in_step(k)
                            };
                            let count = events.iter().filter(|e| e.mark == m).count() as f64;
                            resid[j] * (count - norm) / norm
                        })
                        .collect();
                    let fit = step.fit(&target);
                    for j in 0..n_paths {
                        zt[j * kk + m] = fit[j];
                    }
                }
            }

            // Explicit generator step.
            let current: Vec<f64> = (0..n_paths)
                .into_par_iter()
                .map(|j| {
                    let view = LoadingView {
                        z1: z1[j],
                        z2: z2[j],
                        zt1: &zt1[j * k1..(j + 1) * k1],
                        zt2: &zt2[j * k2..(j + 1) * k2],
                    };
                    fitted[j] + dt * generator(k, j, fitted[j], &view)
                })
                .collect();
            for (j, &v) in current.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NumericDivergence {
                        what: "backward value",
                        step: k,
                    });
                }
                bundle.y[j * (n + 1) + k] = v;
                bundle.z1[j * n + k] = z1[j];
                bundle.z2[j * n + k] = z2[j];
                for m in 0..k1 {
                    bundle.zt1[(j * n + k) * k1 + m] = zt1[j * k1 + m];
                }
                for m in 0..k2 {
                    bundle.zt2[(j * n + k) * k2 + m] = zt2[j * k2 + m];
                }
            }
            next = current;
        }
        Ok(bundle)
    }
}

/// Builds a standardized polynomial design matrix in one state variable.
pub fn poly_design(states: &[f64], degree: usize) -> Vec<f64> {
    let mut xs = states.to_vec();
    crate::regression::standardize(&mut xs);
    let dim = degree + 1;
    let mut out = Vec::with_capacity(xs.len() * dim);
    for &x in &xs {
        let mut p = 1.0;
        for _ in 0..dim {
            out.push(p);
            p *= x;
        }
    }
    out
}

/// Builds a standardized monomial design matrix in several state variables
/// up to a total degree.
pub fn multi_design(columns: &[Vec<f64>], degree: usize) -> (Vec<f64>, usize) {
    let n_paths = columns.first().map_or(0, |c| c.len());
    let mut std_cols: Vec<Vec<f64>> = columns.to_vec();
    for c in &mut std_cols {
        crate::regression::standardize(c);
    }
    let dim = crate::regression::monomial_count(columns.len(), degree);
    let mut out = Vec::with_capacity(n_paths * dim);
    let mut vars = vec![0.0; columns.len()];
    let mut buf = Vec::with_capacity(dim);
    for j in 0..n_paths {
        for (v, c) in vars.iter_mut().zip(&std_cols) {
            *v = c[j];
        }
        crate::regression::monomials(&vars, degree, &mut buf);
        out.extend_from_slice(&buf);
    }
    (out, dim)
}
