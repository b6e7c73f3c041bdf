//! Empirical order-of-magnitude study of the variation norms along a
//! shrinking family of spike widths.

use rayon::prelude::*;

use crate::adjoint::simulate_trajectory_bundle;
use crate::drivers::sample_driver_bundle;
use crate::error::Result;
use crate::forward::{simulate_forward, ForwardPath};
use crate::grid::TimeGrid;
use crate::marks::MarkSpace;
use crate::picard::BsdepBasis;
use crate::problem::{Control, FbsdepProblem, Measure};
use crate::spike::{build_spike_control, SpikeSpec};
use crate::stats::{line_fit, mean_se};
use crate::variation::simulate_variations;

/// Slope record for one tracked quantity.
#[derive(Debug, Clone)]
pub struct SlopeRecord {
    pub quantity: &'static str,
    pub eps: Vec<f64>,
    pub norms: Vec<f64>,
    pub ses: Vec<f64>,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    /// Set when a norm estimate is indistinguishable from its Monte Carlo
    /// noise, making the slope unreliable.
    pub below_noise_floor: bool,
}

fn fit_slope(record: &mut SlopeRecord) {
    record.below_noise_floor = record
        .norms
        .iter()
        .zip(&record.ses)
        .any(|(n, s)| *n <= 3.0 * *s || *n <= 0.0);
    if record.below_noise_floor {
        return;
    }
    let xs: Vec<f64> = record.eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = record.norms.iter().map(|n| n.ln()).collect();
    let (_, slope, se) = line_fit(&xs, &ys);
    record.slope = Some(slope);
    record.slope_se = se;
}

/// Report of the order study.
#[derive(Debug, Clone)]
pub struct OrderReport {
    pub x1: SlopeRecord,
    pub remainder: SlopeRecord,
    pub gamma1: SlopeRecord,
}

/// Measures `E sup |x^1|^beta`, the first-order remainder
/// `E sup |x^eps - x - x^1|^2`, and `E sup |gamma^1|^2` for each epsilon
/// in the family, then fits log-log slopes.
#[allow(clippy::too_many_arguments)]
pub fn estimate_variation_order(
    problem: &FbsdepProblem,
    base: &Control,
    grid: &TimeGrid,
    ms1: &MarkSpace,
    ms2: &MarkSpace,
    spike_t_bar: f64,
    spike_value: f64,
    eps_family: &[f64],
    beta: f64,
    n_paths: usize,
    seed: u64,
) -> Result<OrderReport> {
    let mut x1 = SlopeRecord {
        quantity: "sup|x1|^beta",
        eps: eps_family.to_vec(),
        norms: vec![],
        ses: vec![],
        slope: None,
        slope_se: None,
        below_noise_floor: false,
    };
    let mut remainder = SlopeRecord {
        quantity: "sup|x_eps - x - x1|^2",
        ..x1.clone()
    };
    let mut gamma1 = SlopeRecord {
        quantity: "sup|gamma1|^2",
        ..x1.clone()
    };

    let drivers = sample_driver_bundle(grid, ms1, ms2, seed, n_paths)?;
    let traj = simulate_trajectory_bundle(
        problem,
        vec![base.clone()],
        drivers,
        BsdepBasis::default(),
    )?;

    for &eps in eps_family {
        let spec = SpikeSpec {
            t_bar: spike_t_bar,
            eps,
            value: spike_value,
        };
        let spiked: Vec<Control> = traj
            .drivers
            .iter()
            .map(|d| build_spike_control(base, &spec, &d.jumps2, grid))
            .collect::<Result<_>>()?;
        let var = simulate_variations(problem, &traj, None, &spiked)?;
        let perturbed: Vec<ForwardPath> = (0..traj.n_paths())
            .into_par_iter()
            .map(|j| {
                simulate_forward(
                    problem,
                    &spiked[j],
                    &traj.drivers[j],
                    Measure::Reference,
                    None,
                )
            })
            .collect::<Result<_>>()?;

        let sup_x1: Vec<f64> = (0..traj.n_paths())
            .map(|j| {
                var.x1[j]
                    .iter()
                    .fold(0.0f64, |a, v| a.max(v.abs()))
                    .powf(beta)
            })
            .collect();
        let sup_rem: Vec<f64> = (0..traj.n_paths())
            .map(|j| {
                (0..var.x1[j].len())
                    .map(|k| {
                        (perturbed[j].values[k] - traj.forward[j].values[k] - var.x1[j][k]).abs()
                    })
                    .fold(0.0f64, f64::max)
                    .powi(2)
            })
            .collect();
        let sup_g1: Vec<f64> = (0..traj.n_paths())
            .map(|j| {
                var.gamma1[j]
                    .iter()
                    .fold(0.0f64, |a, v| a.max(v.abs()))
                    .powi(2)
            })
            .collect();
        for (rec, vals) in [
            (&mut x1, sup_x1),
            (&mut remainder, sup_rem),
            (&mut gamma1, sup_g1),
        ] {
            let (m, se) = mean_se(&vals);
            rec.norms.push(m);
            rec.ses.push(se.unwrap_or(f64::INFINITY));
        }
    }

    fit_slope(&mut x1);
    fit_slope(&mut remainder);
    fit_slope(&mut gamma1);
    Ok(OrderReport {
        x1,
        remainder,
        gamma1,
    })
}
