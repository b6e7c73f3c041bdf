//! Evaluation of the control Hamiltonian along a trajectory and the
//! binned conditional estimate of its gap at a test control value.

use rayon::prelude::*;

use crate::adjoint::{AdjointBundle, CoefDerivs, Slot, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::problem::FbsdepProblem;
use crate::stats::{bin_of, mean_se, quantile_edges};

/// Gap statistics within one observation bin.
#[derive(Debug, Clone)]
pub struct GapCell {
    pub bin: usize,
    pub count: usize,
    pub gap: f64,
    pub se: Option<f64>,
}

impl GapCell {
    pub fn z(&self) -> f64 {
        match self.se {
            Some(se) if se > 0.0 => self.gap / se,
            _ => f64::INFINITY,
        }
    }
}

/// The Hamiltonian at one path-step, evaluated at control value `u`. The
/// Brownian arguments of the generator and the cost are shifted by
/// `p (sigma_i(u) - sigma_i(ubar))` exactly as the composite-argument
/// structure requires.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_value(
    problem: &FbsdepProblem,
    derivs: &CoefDerivs,
    traj: &TrajectoryBundle,
    adj: &AdjointBundle,
    j: usize,
    k: usize,
    u: f64,
) -> f64 {
    let a = traj.args(j, k);
    let gamma = traj.gamma[j].values[k];
    let h = adj.h[j][k];
    let p = adj.p.value(j, k);
    let m = adj.m.value(j, k);
    let n1 = adj.m.z1_at(j, k);
    let n2 = adj.m.z2_at(j, k);
    let s2 = adj.r.z2_at(j, k);
    let alpha = adj.alpha.value(j, k);
    let big_p = adj.p2.value(j, k);

    let sig1_bar = (problem.sigma1)(a.t, a.x, a.u);
    let sig2_bar = (problem.sigma2)(a.t, a.x, a.u);
    let sig1_u = (problem.sigma1)(a.t, a.x, u);
    let sig2_u = (problem.sigma2)(a.t, a.x, u);

    let l_z1 = gamma * derivs.cost_partial(&a, Slot::Z1);
    let l_z2 = gamma * derivs.cost_partial(&a, Slot::Z2);
    let g_z1 = derivs.gen_partial(&a, Slot::Z1);
    let g_z2 = derivs.gen_partial(&a, Slot::Z2);

    let mut shifted = a;
    shifted.u = u;
    shifted.z1 = a.z1 + p * (sig1_u - sig1_bar);
    shifted.z2 = a.z2 + p * (sig2_u - sig2_bar);

    let mut b1_args = a;
    b1_args.u = u;
    let vol = (problem.obs_vol)(a.t);
    let b2_u = (problem.obs_drift)(&b1_args);
    let b2_bar = (problem.obs_drift)(&a);

    (-(l_z1 + h * g_z1) * p + n1) * sig1_u
        + (-(l_z2 + h * g_z2) * p + n2) * sig2_u
        + 0.5 * (sig1_u * sig1_u + sig2_u * sig2_u) * big_p
        - (sig1_u * sig1_bar + sig2_u * sig2_bar) * big_p
        + h * (problem.gen)(&shifted)
        + gamma * (problem.run_cost)(&shifted)
        + m * problem.tilde_b1(&b1_args)
        + s2 * gamma * b2_u / vol
        + (sig2_u - sig2_bar) * (gamma * b2_u / vol - gamma * b2_bar / vol) * alpha
}

/// Binned conditional estimate of `H(test_u) - H(ubar)` at grid node `k`,
/// with paths grouped into `n_bins` observation-value quantile bins.
pub fn hamiltonian_gap(
    problem: &FbsdepProblem,
    traj: &TrajectoryBundle,
    adj: &AdjointBundle,
    test_u: f64,
    k: usize,
    n_bins: usize,
) -> Result<Vec<GapCell>> {
    let derivs = CoefDerivs { problem };
    let n_paths = traj.n_paths();
    let gaps: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let ubar = traj.control(j).at_step(k.min(traj.backward.n_steps - 1));
            hamiltonian_value(problem, &derivs, traj, adj, j, k, test_u)
                - hamiltonian_value(problem, &derivs, traj, adj, j, k, ubar)
        })
        .collect();
    let obs: Vec<f64> = (0..n_paths).map(|j| traj.obs[j][k]).collect();
    let edges = quantile_edges(&obs, n_bins);

    let mut cells = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let vals: Vec<f64> = (0..n_paths)
            .filter(|&j| bin_of(obs[j], &edges) == b)
            .map(|j| gaps[j])
            .collect();
        if vals.is_empty() {
            return Err(Error::InsufficientPaths {
                t: traj.drivers[0].grid.node(k),
                bin: b,
                count: 0,
            });
        }
        let (gap, se) = mean_se(&vals);
        cells.push(GapCell {
            bin: b,
            count: vals.len(),
            gap,
            se,
        });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{simulate_trajectory_bundle, solve_adjoint_bundle};
    use crate::drivers::sample_driver_bundle;
    use crate::grid::TimeGrid;
    use crate::lq::{default_mark_spaces, lq_default};
    use crate::picard::BsdepBasis;
    use crate::problem::Control;

    #[test]
    fn gap_at_base_control_is_zero() {
        let (ms1, ms2) = default_mark_spaces();
        let coeffs = lq_default(ms1.clone(), ms2.clone());
        let problem = coeffs.to_problem().unwrap();
        let grid = TimeGrid::uniform(1.0, 25).unwrap();
        let drivers = sample_driver_bundle(&grid, &ms1, &ms2, 3, 200).unwrap();
        let traj = simulate_trajectory_bundle(
            &problem,
            vec![Control::constant(1.5, 25)],
            drivers,
            BsdepBasis::default(),
        )
        .unwrap();
        let adj = solve_adjoint_bundle(&problem, &traj, 2).unwrap();
        let cells = hamiltonian_gap(&problem, &traj, &adj, 1.5, 10, 4).unwrap();
        for c in cells {
            assert!(c.gap.abs() < 1e-12, "gap {}", c.gap);
        }
    }

    #[test]
    fn quadratic_structure_in_u() {
        // for the LQ benchmark the per-path gap is quadratic in u; fitting
        // the three-point second difference must be positive
        let (ms1, ms2) = default_mark_spaces();
        let coeffs = lq_default(ms1.clone(), ms2.clone());
        let problem = coeffs.to_problem().unwrap();
        let grid = TimeGrid::uniform(1.0, 25).unwrap();
        let drivers = sample_driver_bundle(&grid, &ms1, &ms2, 5, 400).unwrap();
        let traj = simulate_trajectory_bundle(
            &problem,
            vec![Control::constant(1.0, 25)],
            drivers,
            BsdepBasis::default(),
        )
        .unwrap();
        let adj = solve_adjoint_bundle(&problem, &traj, 2).unwrap();
        let gap_at = |u: f64| -> f64 {
            hamiltonian_gap(&problem, &traj, &adj, u, 12, 1)
                .unwrap()
                .remove(0)
                .gap
        };
        let (g_minus, g_mid, g_plus) = (gap_at(2.0), gap_at(3.0), gap_at(4.0));
        let second_diff = g_plus - 2.0 * g_mid + g_minus;
        assert!(second_diff > 0.0, "second difference {second_diff}");
    }
}
