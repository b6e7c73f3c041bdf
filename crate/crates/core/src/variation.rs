//! First- and second-order variational paths under a spike perturbation,
//! the algebraic backward variations from the costate gains, and an
//! independent regression solve of the first-order backward variation for
//! cross-checking.

use rayon::prelude::*;

use crate::adjoint::{AdjointBundle, CoefDerivs, Slot, TrajectoryBundle};
use crate::backward::{multi_design, BackwardBundle, BsdepEngine};
use crate::error::Result;
use crate::problem::{Control, FbsdepProblem};

/// Variational paths across the bundle.
pub struct VariationPaths {
    /// First-order state variation, per path at nodes.
    pub x1: Vec<Vec<f64>>,
    /// Second-order state variation.
    pub x2: Vec<Vec<f64>>,
    /// First- and second-order density variations.
    pub gamma1: Vec<Vec<f64>>,
    pub gamma2: Vec<Vec<f64>>,
    /// Algebraic first-order backward variation `y1 = p x1` at nodes.
    pub y1: Vec<Vec<f64>>,
    /// Algebraic loadings `z_i^1 = k1_i x1 + p delta sigma_i` per step.
    pub z1_1: Vec<Vec<f64>>,
    pub z2_1: Vec<Vec<f64>>,
    /// Algebraic jump loadings `zt_i^1 = k2_i x1` per step and mark.
    pub zt1_1: Vec<Vec<f64>>,
    pub zt2_1: Vec<Vec<f64>>,
}

/// Per-step control difference of the spiked control against the base.
fn delta_u(spiked: &Control, base: &Control, k: usize) -> Option<(f64, f64)> {
    let (u, ub) = (spiked.at_step(k), base.at_step(k));
    if u != ub {
        Some((u, ub))
    } else {
        None
    }
}

/// Simulates the variational equations along every path of the trajectory
/// and, when the costate bundle is supplied, assembles the algebraic
/// backward variations from its gains (the backward fields stay empty
/// otherwise).
pub fn simulate_variations(
    problem: &FbsdepProblem,
    traj: &TrajectoryBundle,
    adjoints: Option<&AdjointBundle>,
    spiked: &[Control],
) -> Result<VariationPaths> {
    let derivs = CoefDerivs { problem };
    let n_paths = traj.n_paths();
    let grid = &traj.drivers[0].grid;
    let n = grid.n_steps();
    let pick_spiked = |j: usize| -> &Control {
        if spiked.len() == 1 {
            &spiked[0]
        } else {
            &spiked[j]
        }
    };

    struct Row {
        x1: Vec<f64>,
        x2: Vec<f64>,
        g1: Vec<f64>,
        g2: Vec<f64>,
    }

    let rows: Vec<Row> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let d = &traj.drivers[j];
            let base = traj.control(j);
            let spiked = pick_spiked(j);
            let mut x1 = Vec::with_capacity(n + 1);
            let mut x2 = Vec::with_capacity(n + 1);
            let mut g1 = Vec::with_capacity(n + 1);
            let mut g2 = Vec::with_capacity(n + 1);
            x1.push(0.0);
            x2.push(0.0);
            g1.push(0.0);
            g2.push(0.0);
            let (mut v1, mut v2, mut w1v, mut w2v) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let mut ev1_seen = 0usize;
            let mut ev2_seen = 0usize;
            for k in 0..n {
                let t = grid.node(k);
                let dt = grid.dt(k);
                let a = traj.args(j, k);
                let x = a.x;
                let ub = a.u;
                let gamma = traj.gamma[j].values[k];
                let vol = (problem.obs_vol)(t);
                let b2 = (problem.obs_drift)(&a);
                let b2x = derivs.obs_drift_x(&a);

                let b1x = derivs.tilde_b1_x(&a);
                let b1xx = derivs.tilde_b1_xx(&a);
                let s1x = derivs.sigma_x(1, t, x, ub);
                let s2x = derivs.sigma_x(2, t, x, ub);
                let s1xx = derivs.sigma_xx(1, t, x, ub);
                let s2xx = derivs.sigma_xx(2, t, x, ub);

                // spike differences at this step
                let (ds1, ds2, db1, ds1x, ds2x, db2) = match delta_u(spiked, base, k) {
                    Some((u, ubase)) => {
                        let mut au = a;
                        au.u = u;
                        let mut ab = a;
                        ab.u = ubase;
                        (
                            (problem.sigma1)(t, x, u) - (problem.sigma1)(t, x, ubase),
                            (problem.sigma2)(t, x, u) - (problem.sigma2)(t, x, ubase),
                            problem.tilde_b1(&au) - problem.tilde_b1(&ab),
                            derivs.sigma_x(1, t, x, u) - s1x,
                            derivs.sigma_x(2, t, x, u) - s2x,
                            (problem.obs_drift)(&au) - (problem.obs_drift)(&ab),
                        )
                    }
                    None => (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
                };

                // jump compensator linearizations (events handled below)
                let mut comp_x1 = 0.0;
                let mut comp_x2 = 0.0;
                for (i, space) in [&problem.ms1, &problem.ms2].into_iter().enumerate() {
                    for m in 0..space.len() {
                        let e = space.mark(m);
                        let w = space.weight(m);
                        let fx = derivs.f_x(i + 1, t, x, ub, e);
                        let fxx = derivs.f_xx(i + 1, t, x, ub, e);
                        comp_x1 += fx * w;
                        comp_x2 += (fx * v2 + 0.5 * fxx * v1 * v1) * w;
                    }
                }

                let dw1 = d.dw1(k);
                let dw2 = d.dw2(k);

                let n1 = v1 + b1x * v1 * dt - comp_x1 * v1 * dt
                    + (s1x * v1 + ds1) * dw1
                    + (s2x * v1 + ds2) * dw2;
                let n2 = v2
                    + (b1x * v2 + 0.5 * b1xx * v1 * v1 + db1) * dt
                    - comp_x2 * dt
                    + (s1x * v2 + 0.5 * s1xx * v1 * v1 + ds1x * v1) * dw1
                    + (s2x * v2 + 0.5 * s2xx * v1 * v1 + ds2x * v1) * dw2;

                // density variations: loading b2~ = gamma sigma3^{-1} b2
                let b2t_x = gamma * b2x / vol;
                let b2t_g = b2 / vol;
                let db2t = gamma * db2 / vol;
                let mut comp_g1 = 0.0;
                let mut comp_g2 = 0.0;
                for m in 0..problem.ms2.len() {
                    let e = problem.ms2.mark(m);
                    let w = problem.ms2.weight(m);
                    let lam = (problem.tilt)(t, x, e);
                    let lam_x = derivs.tilt_x(t, x, e);
                    let lam_xx = crate::diff::d2(|xx| (problem.tilt)(t, xx, e), x);
                    // f4 = gamma (lambda - 1)
                    comp_g1 += (gamma * lam_x * v1 + (lam - 1.0) * w1v) * w;
                    comp_g2 += (gamma * lam_x * v2
                        + (lam - 1.0) * w2v
                        + 0.5 * gamma * lam_xx * v1 * v1
                        + lam_x * v1 * w1v)
                        * w;
                }
                let quad_b2t = {
                    // [x1, g1] D2 b2~ [x1, g1]^T with b2~ = gamma b2(x)/vol
                    let b2xx = crate::diff::d2(
                        |xx| {
                            let mut aa = a;
                            aa.x = xx;
                            (problem.obs_drift)(&aa)
                        },
                        x,
                    );
                    gamma * b2xx / vol * v1 * v1 + 2.0 * (b2x / vol) * v1 * w1v
                };
                // second-order spike terms of the density loading
                let d2nd = match delta_u(spiked, base, k) {
                    Some((u, ubase)) => {
                        let mut au = a;
                        au.u = u;
                        let mut ab = a;
                        ab.u = ubase;
                        let db2x =
                            (derivs.obs_drift_x(&au) - derivs.obs_drift_x(&ab)) / vol;
                        let db2g =
                            ((problem.obs_drift)(&au) - (problem.obs_drift)(&ab)) / vol;
                        gamma * db2x * v1 + db2g * w1v
                    }
                    None => 0.0,
                };
                let m1 = w1v + (b2t_x * v1 + b2t_g * w1v + db2t) * dw2 - comp_g1 * dt;
                let m2 = w2v + (b2t_x * v2 + b2t_g * w2v + 0.5 * quad_b2t + d2nd) * dw2
                    - comp_g2 * dt;

                // events, in time order within the step
                let ev1 = d.jumps1.in_step(k);
                let ev2 = d.jumps2.in_step(k);
                let (mut i1, mut i2) = (0usize, 0usize);
                let (mut n1, mut n2, mut m1, mut m2) = (n1, n2, m1, m2);
                while i1 < ev1.len() || i2 < ev2.len() {
                    let first = match (ev1.get(i1), ev2.get(i2)) {
                        (Some(a_), Some(b_)) => a_.time <= b_.time,
                        (Some(_), None) => true,
                        _ => false,
                    };
                    if first {
                        let ev = ev1[i1];
                        let x_pre = traj.forward[j].pre_jump1[ev1_seen];
                        let fx = derivs.f_x(1, ev.time, x_pre, ub, d.ms1.mark(ev.mark));
                        let fxx = derivs.f_xx(1, ev.time, x_pre, ub, d.ms1.mark(ev.mark));
                        let pre1 = n1;
                        let pre2 = n2;
                        n1 += fx * pre1;
                        n2 += fx * pre2 + 0.5 * fxx * pre1 * pre1;
                        i1 += 1;
                        ev1_seen += 1;
                    } else {
                        let ev = ev2[i2];
                        let x_pre = traj.forward[j].pre_jump2[ev2_seen];
                        let e = d.ms2.mark(ev.mark);
                        let fx = derivs.f_x(2, ev.time, x_pre, ub, e);
                        let fxx = derivs.f_xx(2, ev.time, x_pre, ub, e);
                        let lam = (problem.tilt)(ev.time, x_pre, e);
                        let lam_x = derivs.tilt_x(ev.time, x_pre, e);
                        let lam_xx =
                            crate::diff::d2(|xx| (problem.tilt)(ev.time, xx, e), x_pre);
                        let pre1 = n1;
                        let pre2 = n2;
                        let preg1 = m1;
                        let preg2 = m2;
                        n1 += fx * pre1;
                        n2 += fx * pre2 + 0.5 * fxx * pre1 * pre1;
                        // f4_x = gamma lambda_x, f4_gamma = lambda - 1, and
                        // the mixed quadratic form of f4 at second order
                        m1 += gamma * lam_x * pre1 + (lam - 1.0) * preg1;
                        m2 += gamma * lam_x * pre2
                            + (lam - 1.0) * preg2
                            + 0.5 * gamma * lam_xx * pre1 * pre1
                            + lam_x * pre1 * preg1;
                        i2 += 1;
                        ev2_seen += 1;
                    }
                }

                v1 = n1;
                v2 = n2;
                w1v = m1;
                w2v = m2;
                x1.push(v1);
                x2.push(v2);
                g1.push(w1v);
                g2.push(w2v);
            }
            Row { x1, x2, g1, g2 }
        })
        .collect();

    // algebraic backward variations from the costate gains
    let mut y1 = Vec::new();
    let mut z1_1 = Vec::new();
    let mut z2_1 = Vec::new();
    let mut zt1_1 = Vec::new();
    let mut zt2_1 = Vec::new();
    if let Some(adjoints) = adjoints {
        for j in 0..n_paths {
            let base = traj.control(j);
            let spiked = pick_spiked(j);
            let y: Vec<f64> = (0..=n)
                .map(|k| adjoints.p.value(j, k) * rows[j].x1[k])
                .collect();
            let mut za = Vec::with_capacity(n);
            let mut zb = Vec::with_capacity(n);
            let mut ta = Vec::with_capacity(n * problem.ms1.len());
            let mut tb = Vec::with_capacity(n * problem.ms2.len());
            for k in 0..n {
                let a = traj.args(j, k);
                let (ds1, ds2) = match delta_u(spiked, base, k) {
                    Some((u, ubase)) => (
                        (problem.sigma1)(a.t, a.x, u) - (problem.sigma1)(a.t, a.x, ubase),
                        (problem.sigma2)(a.t, a.x, u) - (problem.sigma2)(a.t, a.x, ubase),
                    ),
                    None => (0.0, 0.0),
                };
                let p_v = adjoints.p.value(j, k);
                za.push(
                    adjoints.k1(&CoefDerivs { problem }, traj, 1, j, k) * rows[j].x1[k]
                        + p_v * ds1,
                );
                zb.push(
                    adjoints.k1(&CoefDerivs { problem }, traj, 2, j, k) * rows[j].x1[k]
                        + p_v * ds2,
                );
                for m in 0..problem.ms1.len() {
                    ta.push(
                        adjoints.k2(&CoefDerivs { problem }, traj, 1, j, k, m) * rows[j].x1[k],
                    );
                }
                for m in 0..problem.ms2.len() {
                    tb.push(
                        adjoints.k2(&CoefDerivs { problem }, traj, 2, j, k, m) * rows[j].x1[k],
                    );
                }
            }
            y1.push(y);
            z1_1.push(za);
            z2_1.push(zb);
            zt1_1.push(ta);
            zt2_1.push(tb);
        }
    }

    Ok(VariationPaths {
        x1: rows.iter().map(|r| r.x1.clone()).collect(),
        x2: rows.iter().map(|r| r.x2.clone()).collect(),
        gamma1: rows.iter().map(|r| r.g1.clone()).collect(),
        gamma2: rows.iter().map(|r| r.g2.clone()).collect(),
        y1,
        z1_1,
        z2_1,
        zt1_1,
        zt2_1,
    })
}

/// Solves the first-order backward variation as its own linear equation
/// with the regression engine (independent of the algebraic route), for
/// the dual-construction residual check.
pub fn solve_y1_bsdep(
    problem: &FbsdepProblem,
    traj: &TrajectoryBundle,
    adjoints: &AdjointBundle,
    variations: &VariationPaths,
    spiked: &[Control],
) -> Result<BackwardBundle> {
    let derivs = CoefDerivs { problem };
    let n_paths = traj.n_paths();
    let n = traj.drivers[0].grid.n_steps();
    let pick_spiked = |j: usize| -> &Control {
        if spiked.len() == 1 {
            &spiked[0]
        } else {
            &spiked[j]
        }
    };
    let terminal: Vec<f64> = (0..n_paths)
        .map(|j| derivs.phi_x(traj.forward[j].terminal()) * variations.x1[j][n])
        .collect();
    let n_feat = crate::regression::monomial_count(2, 2);
    let engine = BsdepEngine::new(n_feat);
    let w1 = problem.ms1.weights().to_vec();
    let w2 = problem.ms2.weights().to_vec();
    engine.solve(
        &traj.drivers,
        |k| {
            let xs: Vec<f64> = (0..n_paths).map(|j| traj.forward[j].values[k]).collect();
            let v1: Vec<f64> = (0..n_paths).map(|j| variations.x1[j][k]).collect();
            multi_design(&[xs, v1], 2).0
        },
        &terminal,
        |k, j, y_fit, loadings| {
            let a = traj.args(j, k);
            let base = traj.control(j);
            let spk = pick_spiked(j);
            let (ds1, ds2) = match delta_u(spk, base, k) {
                Some((u, ubase)) => (
                    (problem.sigma1)(a.t, a.x, u) - (problem.sigma1)(a.t, a.x, ubase),
                    (problem.sigma2)(a.t, a.x, u) - (problem.sigma2)(a.t, a.x, ubase),
                ),
                None => (0.0, 0.0),
            };
            let p_v = adjoints.p.value(j, k);
            let q1 = adjoints.p.z1_at(j, k);
            let q2 = adjoints.p.z2_at(j, k);
            let zeta1: f64 = loadings.zt1.iter().zip(&w1).map(|(z, w)| z * w).sum();
            let zeta2: f64 = loadings.zt2.iter().zip(&w2).map(|(z, w)| z * w).sum();
            derivs.gen_partial(&a, Slot::X) * variations.x1[j][k]
                + derivs.gen_partial(&a, Slot::Y) * y_fit
                + derivs.gen_partial(&a, Slot::Z1) * (loadings.z1 - p_v * ds1)
                + derivs.gen_partial(&a, Slot::Z2) * (loadings.z2 - p_v * ds2)
                + derivs.gen_partial(&a, Slot::Zeta1) * zeta1
                + derivs.gen_partial(&a, Slot::Zeta2) * zeta2
                - q1 * ds1
                - q2 * ds2
        },
    )
}
