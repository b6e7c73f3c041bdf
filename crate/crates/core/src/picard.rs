//! Backward solves along simulated forward paths and the fully coupled
//! fixed-point iteration.

use rayon::prelude::*;

use crate::backward::{poly_design, BackwardBundle, BsdepEngine};
use crate::drivers::Drivers;
use crate::error::{Error, Result};
use crate::forward::{simulate_forward, ForwardPath, FrozenBackward};
use crate::problem::{Control, FbsdepProblem, Measure, ThetaArgs};
use crate::stats::line_fit;

/// Regression basis specification for the backward solves: polynomial in
/// the forward state.
#[derive(Debug, Clone, Copy)]
pub struct BsdepBasis {
    pub degree: usize,
}

impl Default for BsdepBasis {
    fn default() -> Self {
        Self { degree: 3 }
    }
}

/// Per-path control lookup; a single shared control is broadcast.
fn control_for(controls: &[Control], j: usize) -> &Control {
    if controls.len() == 1 {
        &controls[0]
    } else {
        &controls[j]
    }
}

/// Solves the backward equation of `problem` along given forward paths by
/// regression Monte Carlo. Terminal values are pinned to `phi(x_T)` path
/// by path.
pub fn solve_bsdep(
    problem: &FbsdepProblem,
    forward: &[ForwardPath],
    controls: &[Control],
    drivers: &[Drivers],
    basis: BsdepBasis,
) -> Result<BackwardBundle> {
    assert_eq!(forward.len(), drivers.len());
    let n_paths = drivers.len();
    let grid = &drivers[0].grid;
    let engine = BsdepEngine::new(basis.degree + 1);
    let terminal: Vec<f64> = forward
        .iter()
        .map(|p| (problem.terminal)(p.terminal()))
        .collect();
    let w1 = problem.ms1.weights().to_vec();
    let w2 = problem.ms2.weights().to_vec();
    engine.solve(
        drivers,
        |k| {
            let states: Vec<f64> = (0..n_paths).map(|j| forward[j].values[k]).collect();
            poly_design(&states, basis.degree)
        },
        &terminal,
        |k, j, y_fit, loadings| {
            let zeta1: f64 = loadings.zt1.iter().zip(&w1).map(|(z, w)| z * w).sum();
            let zeta2: f64 = loadings.zt2.iter().zip(&w2).map(|(z, w)| z * w).sum();
            let args = ThetaArgs {
                t: grid.node(k),
                x: forward[j].values[k],
                y: y_fit,
                z1: loadings.z1,
                z2: loadings.z2,
                zeta1,
                zeta2,
                u: control_for(controls, j).at_step(k),
            };
            (problem.gen)(&args)
        },
    )
}

/// Output of the coupled fixed-point solve.
#[derive(Debug)]
pub struct FbsdepSolution {
    pub forward: Vec<ForwardPath>,
    pub backward: BackwardBundle,
    /// Backward solves performed.
    pub iterations: usize,
    /// Iterate-difference norms, one per iteration after the first.
    pub residuals: Vec<f64>,
}

impl FbsdepSolution {
    /// Geometric decay ratio fitted on the log residuals (ignoring exact
    /// zeros); `None` with fewer than two usable residuals.
    pub fn contraction_ratio(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .residuals
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.0)
            .map(|(i, &r)| (i as f64, r.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (_, slope, _) = line_fit(&xs, &ys);
        Some(slope.exp())
    }
}

fn frozen_from_bundle(
    bundle: &BackwardBundle,
    j: usize,
    w1: &[f64],
    w2: &[f64],
) -> FrozenBackward {
    let n = bundle.n_steps;
    let y: Vec<f64> = (0..=n).map(|k| bundle.value(j, k)).collect();
    let z1: Vec<f64> = (0..n).map(|k| bundle.z1_at(j, k)).collect();
    let z2: Vec<f64> = (0..n).map(|k| bundle.z2_at(j, k)).collect();
    let zeta1: Vec<f64> = (0..n)
        .map(|k| bundle.zeta(bundle.zt1_at(j, k), w1))
        .collect();
    let zeta2: Vec<f64> = (0..n)
        .map(|k| bundle.zeta(bundle.zt2_at(j, k), w2))
        .collect();
    FrozenBackward {
        y,
        z1,
        z2,
        zeta1,
        zeta2,
    }
}

/// Iterate-difference norm: the Monte Carlo analogue of the solution-space
/// norm (sup over time for the value, quadratic time integrals for the
/// loadings).
fn iterate_distance(a: &BackwardBundle, b: &BackwardBundle, drivers: &[Drivers]) -> f64 {
    let n_paths = a.n_paths;
    let n = a.n_steps;
    let grid = &drivers[0].grid;
    let w1 = drivers[0].ms1.weights().to_vec();
    let w2 = drivers[0].ms2.weights().to_vec();
    let per_path: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut sup_y: f64 = 0.0;
            for k in 0..=n {
                sup_y = sup_y.max((a.value(j, k) - b.value(j, k)).powi(2));
            }
            let mut quad = 0.0;
            for k in 0..n {
                let dt = grid.dt(k);
                quad += (a.z1_at(j, k) - b.z1_at(j, k)).powi(2) * dt;
                quad += (a.z2_at(j, k) - b.z2_at(j, k)).powi(2) * dt;
                let za = a.zt1_at(j, k);
                let zb = b.zt1_at(j, k);
                for (m, &w) in w1.iter().enumerate() {
                    quad += (za[m] - zb[m]).powi(2) * w * dt;
                }
                let za = a.zt2_at(j, k);
                let zb = b.zt2_at(j, k);
                for (m, &w) in w2.iter().enumerate() {
                    quad += (za[m] - zb[m]).powi(2) * w * dt;
                }
            }
            sup_y + quad
        })
        .collect();
    (per_path.iter().sum::<f64>() / n_paths as f64).sqrt()
}

/// Solves the fully coupled system by freezing the backward components in
/// the forward coefficients and alternating forward simulation with a
/// backward regression solve until the iterates stop moving.
///
/// Contraction is detected empirically: the solve fails with
/// [`Error::NoContraction`] when the residual grows three times in a row.
pub fn solve_coupled_picard(
    problem: &FbsdepProblem,
    controls: &[Control],
    drivers: &[Drivers],
    basis: BsdepBasis,
    tol: f64,
    max_iter: usize,
) -> Result<FbsdepSolution> {
    let n_paths = drivers.len();
    let w1 = problem.ms1.weights().to_vec();
    let w2 = problem.ms2.weights().to_vec();

    let mut frozen: Vec<FrozenBackward> = vec![FrozenBackward::default(); n_paths];
    let mut prev: Option<BackwardBundle> = None;
    let mut residuals = Vec::new();
    let mut grow_streak = 0usize;

    for iter in 1..=max_iter {
        let forward: Vec<ForwardPath> = (0..n_paths)
            .into_par_iter()
            .map(|j| {
                simulate_forward(
                    problem,
                    control_for(controls, j),
                    &drivers[j],
                    Measure::Reference,
                    Some(&frozen[j]),
                )
            })
            .collect::<Result<_>>()?;
        let backward = solve_bsdep(problem, &forward, controls, drivers, basis)?;

        if let Some(prev_bundle) = &prev {
            let res = iterate_distance(&backward, prev_bundle, drivers);
            residuals.push(res);
            if res <= tol {
                return Ok(FbsdepSolution {
                    forward,
                    backward,
                    iterations: iter,
                    residuals,
                });
            }
            if residuals.len() >= 2 && res > residuals[residuals.len() - 2] {
                grow_streak += 1;
                if grow_streak >= 3 {
                    return Err(Error::NoContraction {
                        iterations: iter,
                        residual: res,
                    });
                }
            } else {
                grow_streak = 0;
            }
        }

        frozen = (0..n_paths)
            .into_par_iter()
            .map(|j| frozen_from_bundle(&backward, j, &w1, &w2))
            .collect();
        prev = Some(backward);
    }
    Err(Error::NoContraction {
        iterations: max_iter,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}
