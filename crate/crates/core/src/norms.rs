//! Empirical moment norms of solution bundles and the intensity-vs-count
//! moment comparison.

use rayon::prelude::*;

use crate::backward::BackwardBundle;
use crate::drivers::Drivers;
use crate::forward::ForwardPath;
use crate::stats::mean_se;

/// One Monte Carlo norm estimate.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    pub value: f64,
    pub se: Option<f64>,
}

/// The five norm families at exponent `beta`, plus the two jump-loading
/// variants needed for the intensity/count comparison.
#[derive(Debug, Clone)]
pub struct LbetaReport {
    pub beta: f64,
    pub sup_x: NormEstimate,
    pub sup_y: NormEstimate,
    /// `E (int |z_i|^2 dt)^{beta/2}` per Brownian channel.
    pub z_quad: [NormEstimate; 2],
    /// Intensity form `E (int int |zt_i|^2 nu de dt)^{beta/2}` per train.
    pub zt_nu: [NormEstimate; 2],
    /// Count form `E (int int |zt_i|^2 N(de,dt))^{beta/2}` per train.
    pub zt_count: [NormEstimate; 2],
    /// Paired mean and SE of `nu-form minus count-form` per train; the
    /// moment inequality asks this to be non-positive within noise.
    pub nu_minus_count: [NormEstimate; 2],
}

/// Monte Carlo estimates of the solution norms at exponent `beta >= 2`.
pub fn lbeta_norms(
    forward: &[ForwardPath],
    backward: &BackwardBundle,
    drivers: &[Drivers],
    beta: f64,
) -> LbetaReport {
    assert!(beta >= 2.0, "beta must be >= 2");
    let n_paths = drivers.len();
    let n = backward.n_steps;
    let grid = &drivers[0].grid;
    let half = beta / 2.0;

    struct PerPath {
        sup_x: f64,
        sup_y: f64,
        z_quad: [f64; 2],
        zt_nu: [f64; 2],
        zt_count: [f64; 2],
    }

    let rows: Vec<PerPath> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let sup_x = forward[j]
                .values
                .iter()
                .fold(0.0f64, |a, &v| a.max(v.abs()))
                .powf(beta);
            let sup_y = (0..=n)
                .map(|k| backward.value(j, k).abs())
                .fold(0.0f64, f64::max)
                .powf(beta);
            let mut q1 = 0.0;
            let mut q2 = 0.0;
            let mut nu = [0.0f64; 2];
            let mut count = [0.0f64; 2];
            for k in 0..n {
                let dt = grid.dt(k);
                q1 += backward.z1_at(j, k).powi(2) * dt;
                q2 += backward.z2_at(j, k).powi(2) * dt;
                for (i, (zt, space, train)) in [
                    (backward.zt1_at(j, k), &drivers[j].ms1, &drivers[j].jumps1),
                    (backward.zt2_at(j, k), &drivers[j].ms2, &drivers[j].jumps2),
                ]
                .into_iter()
                .enumerate()
                {
                    for (m, &z) in zt.iter().enumerate() {
                        nu[i] += z * z * space.weight(m) * dt;
                    }
                    for ev in train.in_step(k) {
                        count[i] += zt[ev.mark] * zt[ev.mark];
                    }
                }
            }
            PerPath {
                sup_x,
                sup_y,
                z_quad: [q1.powf(half), q2.powf(half)],
                zt_nu: [nu[0].powf(half), nu[1].powf(half)],
                zt_count: [count[0].powf(half), count[1].powf(half)],
            }
        })
        .collect();

    let estimate = |f: &dyn Fn(&PerPath) -> f64| -> NormEstimate {
        let vals: Vec<f64> = rows.iter().map(f).collect();
        let (value, se) = mean_se(&vals);
        NormEstimate { value, se }
    };

    LbetaReport {
        beta,
        sup_x: estimate(&|r| r.sup_x),
        sup_y: estimate(&|r| r.sup_y),
        z_quad: [estimate(&|r| r.z_quad[0]), estimate(&|r| r.z_quad[1])],
        zt_nu: [estimate(&|r| r.zt_nu[0]), estimate(&|r| r.zt_nu[1])],
        zt_count: [estimate(&|r| r.zt_count[0]), estimate(&|r| r.zt_count[1])],
        nu_minus_count: [
            estimate(&|r| r.zt_nu[0] - r.zt_count[0]),
            estimate(&|r| r.zt_nu[1] - r.zt_count[1]),
        ],
    }
}
