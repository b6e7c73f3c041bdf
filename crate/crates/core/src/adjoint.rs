//! Trajectory bundles under a fixed control and the adjoint systems of the
//! maximum-principle check: the first-order costate, the cost-propagation
//! pair, the cross costate, and the second-order costate, all solved with
//! the regression engine along the trajectory.

use rayon::prelude::*;

use crate::backward::{multi_design, poly_design, BackwardBundle, BsdepEngine};
use crate::diff;
use crate::drivers::Drivers;
use crate::error::Result;
use crate::forward::{simulate_forward, simulate_observation, ForwardPath};
use crate::girsanov::{simulate_gamma_tilde, GammaPath};
use crate::picard::{solve_bsdep, BsdepBasis};
use crate::problem::{Control, FbsdepProblem, Measure, ThetaArgs};

/// Everything known along a bundle of paths under one control: forward
/// state, backward solution, density, and observation paths.
pub struct TrajectoryBundle {
    pub drivers: Vec<Drivers>,
    pub controls: Vec<Control>,
    pub forward: Vec<ForwardPath>,
    pub backward: BackwardBundle,
    pub gamma: Vec<GammaPath>,
    pub obs: Vec<Vec<f64>>,
    pub y0_mean: f64,
}

impl TrajectoryBundle {
    pub fn n_paths(&self) -> usize {
        self.drivers.len()
    }

    pub fn control(&self, j: usize) -> &Control {
        if self.controls.len() == 1 {
            &self.controls[0]
        } else {
            &self.controls[j]
        }
    }

    /// Full argument tuple of the trajectory at `(path, step)`.
    pub fn args(&self, j: usize, k: usize) -> ThetaArgs {
        let d = &self.drivers[j];
        let b = &self.backward;
        let kk = k.min(b.n_steps - 1);
        ThetaArgs {
            t: d.grid.node(k),
            x: self.forward[j].values[k],
            y: b.value(j, k),
            z1: b.z1_at(j, kk),
            z2: b.z2_at(j, kk),
            zeta1: b.zeta(b.zt1_at(j, kk), d.ms1.weights()),
            zeta2: b.zeta(b.zt2_at(j, kk), d.ms2.weights()),
            u: self.control(j).at_step(kk),
        }
    }
}

/// Simulates forward, backward, density, and observation paths under the
/// given control(s).
pub fn simulate_trajectory_bundle(
    problem: &FbsdepProblem,
    controls: Vec<Control>,
    drivers: Vec<Drivers>,
    basis: BsdepBasis,
) -> Result<TrajectoryBundle> {
    let n_paths = drivers.len();
    let pick = |j: usize| -> &Control {
        if controls.len() == 1 {
            &controls[0]
        } else {
            &controls[j]
        }
    };
    let forward: Vec<ForwardPath> = (0..n_paths)
        .into_par_iter()
        .map(|j| simulate_forward(problem, pick(j), &drivers[j], Measure::Reference, None))
        .collect::<Result<_>>()?;
    let backward = solve_bsdep(problem, &forward, &controls, &drivers, basis)?;
    let gamma: Vec<GammaPath> = (0..n_paths)
        .into_par_iter()
        .map(|j| simulate_gamma_tilde(problem, pick(j), &forward[j], None, &drivers[j]))
        .collect::<Result<_>>()?;
    let obs: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|j| simulate_observation(problem, &forward[j], &drivers[j]))
        .collect();
    let y0_mean =
        backward.initial_values().iter().sum::<f64>() / n_paths as f64;
    Ok(TrajectoryBundle {
        drivers,
        controls,
        forward,
        backward,
        gamma,
        obs,
        y0_mean,
    })
}

/// Pointwise coefficient derivatives along the trajectory, all by central
/// differences on the problem's closures.
pub struct CoefDerivs<'a> {
    pub problem: &'a FbsdepProblem,
}

impl CoefDerivs<'_> {
    pub fn sigma_x(&self, i: usize, t: f64, x: f64, u: f64) -> f64 {
        let f = if i == 1 {
            &self.problem.sigma1
        } else {
            &self.problem.sigma2
        };
        diff::d1(|xx| f(t, xx, u), x)
    }

    pub fn sigma_xx(&self, i: usize, t: f64, x: f64, u: f64) -> f64 {
        let f = if i == 1 {
            &self.problem.sigma1
        } else {
            &self.problem.sigma2
        };
        diff::d2(|xx| f(t, xx, u), x)
    }

    pub fn f_x(&self, i: usize, t: f64, x: f64, u: f64, e: f64) -> f64 {
        let f = if i == 1 { &self.problem.f1 } else { &self.problem.f2 };
        diff::d1(|xx| f(t, xx, u, e), x)
    }

    pub fn f_xx(&self, i: usize, t: f64, x: f64, u: f64, e: f64) -> f64 {
        let f = if i == 1 { &self.problem.f1 } else { &self.problem.f2 };
        diff::d2(|xx| f(t, xx, u, e), x)
    }

    pub fn tilde_b1_x(&self, args: &ThetaArgs) -> f64 {
        self.problem.tilde_b1_x(args)
    }

    pub fn tilde_b1_xx(&self, args: &ThetaArgs) -> f64 {
        diff::d2(
            |xx| {
                let mut a = *args;
                a.x = xx;
                self.problem.tilde_b1(&a)
            },
            args.x,
        )
    }

    pub fn gen_partial(&self, args: &ThetaArgs, slot: Slot) -> f64 {
        partial(&self.problem.gen, args, slot)
    }

    pub fn cost_partial(&self, args: &ThetaArgs, slot: Slot) -> f64 {
        partial(&self.problem.run_cost, args, slot)
    }

    pub fn obs_drift_x(&self, args: &ThetaArgs) -> f64 {
        partial(&self.problem.obs_drift, args, Slot::X)
    }

    pub fn tilt_x(&self, t: f64, x: f64, e: f64) -> f64 {
        diff::d1(|xx| (self.problem.tilt)(t, xx, e), x)
    }

    pub fn phi_x(&self, x: f64) -> f64 {
        diff::d1(|xx| (self.problem.terminal)(xx), x)
    }

    pub fn phi_xx(&self, x: f64) -> f64 {
        diff::d2(|xx| (self.problem.terminal)(xx), x)
    }

    pub fn term_cost_x(&self, x: f64) -> f64 {
        diff::d1(|xx| (self.problem.term_cost)(xx), x)
    }

    pub fn term_cost_xx(&self, x: f64) -> f64 {
        diff::d2(|xx| (self.problem.term_cost)(xx), x)
    }

    pub fn init_cost_y(&self, y: f64) -> f64 {
        diff::d1(|yy| (self.problem.init_cost)(yy), y)
    }

    /// Directional quadratic form `dir^T D2 f dir` of the generator or
    /// running cost along a direction in `(x, y, z1, z2, zeta1, zeta2)`.
    pub fn quad_form(&self, f: &crate::problem::ThetaCoef, args: &ThetaArgs, dir: &[f64; 6]) -> f64 {
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        diff::d2_directional(
            |s| {
                let mut a = *args;
                a.x += s * dir[0];
                a.y += s * dir[1];
                a.z1 += s * dir[2];
                a.z2 += s * dir[3];
                a.zeta1 += s * dir[4];
                a.zeta2 += s * dir[5];
                f(&a)
            },
            norm,
        )
    }
}

/// Argument slot of the full tuple for partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    X,
    Y,
    Z1,
    Z2,
    Zeta1,
    Zeta2,
}

fn partial(f: &crate::problem::ThetaCoef, args: &ThetaArgs, slot: Slot) -> f64 {
    let get = |a: &ThetaArgs| match slot {
        Slot::X => a.x,
        Slot::Y => a.y,
        Slot::Z1 => a.z1,
        Slot::Z2 => a.z2,
        Slot::Zeta1 => a.zeta1,
        Slot::Zeta2 => a.zeta2,
    };
    diff::d1(
        |v| {
            let mut a = *args;
            match slot {
                Slot::X => a.x = v,
                Slot::Y => a.y = v,
                Slot::Z1 => a.z1 = v,
                Slot::Z2 => a.z2 = v,
                Slot::Zeta1 => a.zeta1 = v,
                Slot::Zeta2 => a.zeta2 = v,
            }
            f(&a)
        },
        get(args),
    )
}

/// All adjoint systems along the trajectory. Brownian loadings of each
/// backward system double as the costate companions (for the first-order
/// system they enter the variation gains).
pub struct AdjointBundle {
    /// First-order costate `(p, q1, q2, qt1, qt2)`.
    pub p: BackwardBundle,
    /// Cost-propagation forward factor, per path at nodes.
    pub h: Vec<Vec<f64>>,
    /// Density costate `(r, s1, s2, st1, st2)`.
    pub r: BackwardBundle,
    /// State costate `(m, n1, n2, nt1, nt2)`.
    pub m: BackwardBundle,
    /// Cross costate `(alpha, beta1, beta2, bt1, bt2)`.
    pub alpha: BackwardBundle,
    /// Second-order costate `(P, Q1, Q2, Qt1, Qt2)`.
    pub p2: BackwardBundle,
}

impl AdjointBundle {
    /// First-order gain `k1_i = sigma_ix p + q_i`.
    pub fn k1(
        &self,
        derivs: &CoefDerivs,
        traj: &TrajectoryBundle,
        i: usize,
        j: usize,
        k: usize,
    ) -> f64 {
        let a = traj.args(j, k);
        let q = if i == 1 {
            self.p.z1_at(j, k)
        } else {
            self.p.z2_at(j, k)
        };
        derivs.sigma_x(i, a.t, a.x, a.u) * self.p.value(j, k) + q
    }

    /// Jump gain `k2_i(e) = f_ix p + qt_i (1 + f_ix)` at mark index `m`.
    pub fn k2(
        &self,
        derivs: &CoefDerivs,
        traj: &TrajectoryBundle,
        i: usize,
        j: usize,
        k: usize,
        m: usize,
    ) -> f64 {
        let a = traj.args(j, k);
        let space = if i == 1 {
            &traj.drivers[j].ms1
        } else {
            &traj.drivers[j].ms2
        };
        let fx = derivs.f_x(i, a.t, a.x, a.u, space.mark(m));
        let qt = if i == 1 {
            self.p.zt1_at(j, k)[m]
        } else {
            self.p.zt2_at(j, k)[m]
        };
        fx * self.p.value(j, k) + qt * (1.0 + fx)
    }

    /// Intensity-integrated jump gain `int k2_i nu_i(de)`.
    pub fn k2_integrated(
        &self,
        derivs: &CoefDerivs,
        traj: &TrajectoryBundle,
        i: usize,
        j: usize,
        k: usize,
    ) -> f64 {
        let space = if i == 1 {
            &traj.drivers[j].ms1
        } else {
            &traj.drivers[j].ms2
        };
        (0..space.len())
            .map(|m| self.k2(derivs, traj, i, j, k, m) * space.weight(m))
            .sum()
    }
}

/// Degree of the multi-variable regression basis used by the adjoint
/// solves (features are the forward state, the cost factor, and the
/// density).
const ADJOINT_BASIS_DEGREE: usize = 2;

/// Solves every adjoint system along the trajectory.
pub fn solve_adjoint_bundle(
    problem: &FbsdepProblem,
    traj: &TrajectoryBundle,
    state_degree: usize,
) -> Result<AdjointBundle> {
    let derivs = CoefDerivs { problem };
    let n_paths = traj.n_paths();
    let n = traj.drivers[0].grid.n_steps();
    let grid = &traj.drivers[0].grid;
    let mass1 = problem.ms1.total_mass();
    let mass2 = problem.ms2.total_mass();

    // ---- first-order costate -------------------------------------------
    let p_engine = BsdepEngine::new(state_degree + 1);
    let p_terminal: Vec<f64> = (0..n_paths)
        .map(|j| derivs.phi_x(traj.forward[j].terminal()))
        .collect();
    let p = p_engine.solve(
        &traj.drivers,
        |k| {
            let xs: Vec<f64> = (0..n_paths).map(|j| traj.forward[j].values[k]).collect();
            poly_design(&xs, state_degree)
        },
        &p_terminal,
        |k, j, p_fit, loadings| {
            let a = traj.args(j, k);
            let s1x = derivs.sigma_x(1, a.t, a.x, a.u);
            let s2x = derivs.sigma_x(2, a.t, a.x, a.u);
            let k1_1 = s1x * p_fit + loadings.z1;
            let k1_2 = s2x * p_fit + loadings.z2;
            let mut jump_terms = 0.0;
            for (i, (space, zt)) in [(&problem.ms1, loadings.zt1), (&problem.ms2, loadings.zt2)]
                .into_iter()
                .enumerate()
            {
                let gz = derivs.gen_partial(&a, if i == 0 { Slot::Zeta1 } else { Slot::Zeta2 });
                let mut k2_int = 0.0;
                let mut fq = 0.0;
                for m in 0..space.len() {
                    let fx = derivs.f_x(i + 1, a.t, a.x, a.u, space.mark(m));
                    k2_int += (fx * p_fit + zt[m] * (1.0 + fx)) * space.weight(m);
                    fq += fx * zt[m] * space.weight(m);
                }
                jump_terms += gz * k2_int + fq;
            }
            derivs.tilde_b1_x(&a) * p_fit
                + s1x * loadings.z1
                + s2x * loadings.z2
                + derivs.gen_partial(&a, Slot::X)
                + derivs.gen_partial(&a, Slot::Y) * p_fit
                + derivs.gen_partial(&a, Slot::Z1) * k1_1
                + derivs.gen_partial(&a, Slot::Z2) * k1_2
                + jump_terms
        },
    )?;

    // ---- cost factor (forward linear equation) --------------------------
    let gamma_y0 = derivs.init_cost_y(traj.y0_mean);
    let h: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut path = Vec::with_capacity(n + 1);
            let mut hv = gamma_y0;
            path.push(hv);
            for k in 0..n {
                let a = traj.args(j, k);
                let dt = grid.dt(k);
                let gamma = traj.gamma[j].values[k];
                let l_y = gamma * derivs.cost_partial(&a, Slot::Y);
                let l_z1 = gamma * derivs.cost_partial(&a, Slot::Z1);
                let l_z2 = gamma * derivs.cost_partial(&a, Slot::Z2);
                let l_zt1 = gamma * derivs.cost_partial(&a, Slot::Zeta1);
                let l_zt2 = gamma * derivs.cost_partial(&a, Slot::Zeta2);
                let g_y = derivs.gen_partial(&a, Slot::Y);
                let g_z1 = derivs.gen_partial(&a, Slot::Z1);
                let g_z2 = derivs.gen_partial(&a, Slot::Z2);
                let g_zt1 = derivs.gen_partial(&a, Slot::Zeta1);
                let g_zt2 = derivs.gen_partial(&a, Slot::Zeta2);
                let jump_comp =
                    (l_zt1 + hv * g_zt1) * mass1 + (l_zt2 + hv * g_zt2) * mass2;
                hv += (l_y + hv * g_y) * dt - jump_comp * dt
                    + (l_z1 + hv * g_z1) * traj.drivers[j].dw1(k)
                    + (l_z2 + hv * g_z2) * traj.drivers[j].dw2(k);
                for _ev in traj.drivers[j].jumps1.in_step(k) {
                    hv += l_zt1 + hv * g_zt1;
                }
                for _ev in traj.drivers[j].jumps2.in_step(k) {
                    hv += l_zt2 + hv * g_zt2;
                }
                path.push(hv);
            }
            path
        })
        .collect();

    // shared multi-variable features for the remaining systems
    let features = |k: usize| -> Vec<f64> {
        let xs: Vec<f64> = (0..n_paths).map(|j| traj.forward[j].values[k]).collect();
        let hs: Vec<f64> = (0..n_paths).map(|j| h[j][k]).collect();
        let gs: Vec<f64> = (0..n_paths).map(|j| traj.gamma[j].values[k]).collect();
        multi_design(&[xs, hs, gs], ADJOINT_BASIS_DEGREE).0
    };
    let n_feat = crate::regression::monomial_count(3, ADJOINT_BASIS_DEGREE);
    let engine = BsdepEngine::new(n_feat);

    // ---- density costate -------------------------------------------------
    let r_terminal: Vec<f64> = (0..n_paths)
        .map(|j| (problem.term_cost)(traj.forward[j].terminal()))
        .collect();
    let r = engine.solve(&traj.drivers, features, &r_terminal, |k, j, _r_fit, loadings| {
        let a = traj.args(j, k);
        // l~_gamma = l; b2~_gamma = sigma3^{-1} b2; f4_gamma = lambda - 1
        let l_a = (problem.run_cost)(&a);
        let b2g = (problem.obs_drift)(&a) / (problem.obs_vol)(a.t);
        let mut jump = 0.0;
        for m in 0..problem.ms2.len() {
            let lam = (problem.tilt)(a.t, a.x, problem.ms2.mark(m));
            jump += (lam - 1.0) * loadings.zt2[m] * problem.ms2.weight(m);
        }
        l_a + loadings.z2 * b2g + jump
    })?;

    // ---- state costate ----------------------------------------------------
    let m_terminal: Vec<f64> = (0..n_paths)
        .map(|j| {
            let xt = traj.forward[j].terminal();
            traj.gamma[j].terminal() * derivs.term_cost_x(xt)
                + h[j][n] * derivs.phi_x(xt)
        })
        .collect();
    let m = engine.solve(&traj.drivers, features, &m_terminal, |k, j, m_fit, loadings| {
        let a = traj.args(j, k);
        let gamma = traj.gamma[j].values[k];
        let l_x = gamma * derivs.cost_partial(&a, Slot::X);
        let g_x = derivs.gen_partial(&a, Slot::X);
        let b2x = derivs.obs_drift_x(&a) / (problem.obs_vol)(a.t);
        let s2 = r.z2_at(j, k);
        let st2 = r.zt2_at(j, k);
        let mut jumps = 0.0;
        for (i, (space, zt)) in [(&problem.ms1, loadings.zt1), (&problem.ms2, loadings.zt2)]
            .into_iter()
            .enumerate()
        {
            for mm in 0..space.len() {
                let fx = derivs.f_x(i + 1, a.t, a.x, a.u, space.mark(mm));
                jumps += fx * zt[mm] * space.weight(mm);
            }
        }
        // f4_x = gamma * lambda_x
        let mut f4x_term = 0.0;
        for mm in 0..problem.ms2.len() {
            let lx = derivs.tilt_x(a.t, a.x, problem.ms2.mark(mm));
            f4x_term += gamma * lx * st2[mm] * problem.ms2.weight(mm);
        }
        l_x + h[j][k] * g_x
            + m_fit * derivs.tilde_b1_x(&a)
            + derivs.sigma_x(1, a.t, a.x, a.u) * loadings.z1
            + derivs.sigma_x(2, a.t, a.x, a.u) * loadings.z2
            + s2 * gamma * b2x
            + jumps
            + f4x_term
    })?;

    // ---- cross costate ----------------------------------------------------
    let a_terminal: Vec<f64> = (0..n_paths)
        .map(|j| derivs.term_cost_x(traj.forward[j].terminal()))
        .collect();
    let alpha = engine.solve(
        &traj.drivers,
        features,
        &a_terminal,
        |k, j, a_fit, loadings| {
            let a = traj.args(j, k);
            let gamma = traj.gamma[j].values[k];
            let vol = (problem.obs_vol)(a.t);
            let b2g = (problem.obs_drift)(&a) / vol;
            let b2x = derivs.obs_drift_x(&a) / vol;
            let s2 = r.z2_at(j, k);
            let st2 = r.zt2_at(j, k);
            let l_x = derivs.cost_partial(&a, Slot::X);
            let l_y = derivs.cost_partial(&a, Slot::Y);
            let l_z1 = derivs.cost_partial(&a, Slot::Z1);
            let l_z2 = derivs.cost_partial(&a, Slot::Z2);
            let l_zt1 = derivs.cost_partial(&a, Slot::Zeta1);
            let l_zt2 = derivs.cost_partial(&a, Slot::Zeta2);
            let p_v = p.value(j, k);
            let k1_1 = derivs.sigma_x(1, a.t, a.x, a.u) * p_v + p.z1_at(j, k);
            let k1_2 = derivs.sigma_x(2, a.t, a.x, a.u) * p_v + p.z2_at(j, k);
            let mut k2_sums = [0.0f64; 2];
            for (i, space) in [&problem.ms1, &problem.ms2].into_iter().enumerate() {
                let zt = if i == 0 {
                    p.zt1_at(j, k)
                } else {
                    p.zt2_at(j, k)
                };
                for mm in 0..space.len() {
                    let fx = derivs.f_x(i + 1, a.t, a.x, a.u, space.mark(mm));
                    k2_sums[i] += (fx * p_v + zt[mm] * (1.0 + fx)) * space.weight(mm);
                }
            }
            // jump pairings on the second train
            let mut second_train = 0.0;
            let mut alpha_coef = 0.0;
            for mm in 0..problem.ms2.len() {
                let e = problem.ms2.mark(mm);
                let w = problem.ms2.weight(mm);
                let lam = (problem.tilt)(a.t, a.x, e);
                let lam_x = derivs.tilt_x(a.t, a.x, e);
                let f2x = derivs.f_x(2, a.t, a.x, a.u, e);
                // f4_{x gamma} = lambda_x; loading pairings against st2 and
                // the beta-loadings of this system
                second_train += lam_x * st2[mm] * w;
                second_train +=
                    ((lam - 1.0) + f2x * (lam - 1.0) + f2x) * loadings.zt2[mm] * w;
                alpha_coef += f2x * (lam - 1.0) * w;
            }
            let mut first_train = 0.0;
            for mm in 0..problem.ms1.len() {
                let f1x = derivs.f_x(1, a.t, a.x, a.u, problem.ms1.mark(mm));
                first_train += f1x * loadings.zt1[mm] * problem.ms1.weight(mm);
            }
            l_x + l_y * p_v
                + l_z1 * k1_1
                + l_z2 * k1_2
                + l_zt1 * k2_sums[0]
                + l_zt2 * k2_sums[1]
                + derivs.sigma_x(1, a.t, a.x, a.u) * loadings.z1
                + derivs.sigma_x(2, a.t, a.x, a.u) * loadings.z2
                + s2 * gamma * b2x
                + derivs.tilde_b1_x(&a) * a_fit
                + derivs.sigma_x(2, a.t, a.x, a.u) * b2g * a_fit
                + b2g * loadings.z2
                + first_train
                + second_train
                + alpha_coef * a_fit
        },
    )?;

    // ---- second-order costate ----------------------------------------------
    let p2_terminal: Vec<f64> = (0..n_paths)
        .map(|j| {
            let xt = traj.forward[j].terminal();
            h[j][n] * derivs.phi_xx(xt) + traj.gamma[j].terminal() * derivs.term_cost_xx(xt)
        })
        .collect();
    let p2 = engine.solve(
        &traj.drivers,
        features,
        &p2_terminal,
        |k, j, p2_fit, loadings| {
            let a = traj.args(j, k);
            let gamma = traj.gamma[j].values[k];
            let vol = (problem.obs_vol)(a.t);
            let b2x = derivs.obs_drift_x(&a) / vol;
            let b2xx = diff::d2(
                |xx| {
                    let mut aa = a;
                    aa.x = xx;
                    (problem.obs_drift)(&aa) / vol
                },
                a.x,
            );
            let p_v = p.value(j, k);
            let s1x = derivs.sigma_x(1, a.t, a.x, a.u);
            let s2x = derivs.sigma_x(2, a.t, a.x, a.u);
            let k1_1 = s1x * p_v + p.z1_at(j, k);
            let k1_2 = s2x * p_v + p.z2_at(j, k);
            let mut k2_int = [0.0f64; 2];
            for (i, space) in [&problem.ms1, &problem.ms2].into_iter().enumerate() {
                let zt = if i == 0 {
                    p.zt1_at(j, k)
                } else {
                    p.zt2_at(j, k)
                };
                for mm in 0..space.len() {
                    let fx = derivs.f_x(i + 1, a.t, a.x, a.u, space.mark(mm));
                    k2_int[i] += (fx * p_v + zt[mm] * (1.0 + fx)) * space.weight(mm);
                }
            }
            let dir = [1.0, p_v, k1_1, k1_2, k2_int[0], k2_int[1]];
            let quad_l = gamma * derivs.quad_form(&problem.run_cost, &a, &dir);
            let quad_g = h[j][k] * derivs.quad_form(&problem.gen, &a, &dir);
            let s2 = r.z2_at(j, k);
            let st2 = r.zt2_at(j, k);
            let mut jump_terms = 0.0;
            for (i, space) in [&problem.ms1, &problem.ms2].into_iter().enumerate() {
                let (nt, qt) = if i == 0 {
                    (m.zt1_at(j, k), loadings.zt1)
                } else {
                    (m.zt2_at(j, k), loadings.zt2)
                };
                for mm in 0..space.len() {
                    let e = space.mark(mm);
                    let w = space.weight(mm);
                    let fx = derivs.f_x(i + 1, a.t, a.x, a.u, e);
                    let fxx = derivs.f_xx(i + 1, a.t, a.x, a.u, e);
                    jump_terms += (fxx * nt[mm]
                        + (2.0 * fx + fx * fx) * qt[mm]
                        + fx * fx * p2_fit)
                        * w;
                }
            }
            // second-train couplings through the density loading
            let mut second = 0.0;
            for mm in 0..problem.ms2.len() {
                let e = problem.ms2.mark(mm);
                let w = problem.ms2.weight(mm);
                let lam_x = derivs.tilt_x(a.t, a.x, e);
                let lam_xx = diff::d2(|xx| (problem.tilt)(a.t, xx, e), a.x);
                let f2x = derivs.f_x(2, a.t, a.x, a.u, e);
                // f4_xx = gamma lambda_xx; f4_x = gamma lambda_x
                second += gamma * lam_xx * st2[mm] * w;
                second += (2.0 * gamma * lam_x + 2.0 * f2x * gamma * lam_x)
                    * alpha_zt2(&alpha, j, k, mm)
                    * w;
                second += 2.0 * f2x * gamma * lam_x * alpha.value(j, k) * w;
            }
            quad_l
                + quad_g
                + s2 * gamma * b2xx
                + 2.0 * s2x * gamma * b2x * alpha.value(j, k)
                + m.value(j, k) * derivs.tilde_b1_xx(&a)
                + 2.0 * gamma * b2x * alpha.z2_at(j, k)
                + 2.0 * derivs.tilde_b1_x(&a) * p2_fit
                + m.z1_at(j, k) * derivs.sigma_xx(1, a.t, a.x, a.u)
                + m.z2_at(j, k) * derivs.sigma_xx(2, a.t, a.x, a.u)
                + 2.0 * s1x * loadings.z1
                + 2.0 * s2x * loadings.z2
                + (s1x * s1x + s2x * s2x) * p2_fit
                + jump_terms
                + second
        },
    )?;

    Ok(AdjointBundle {
        p,
        h,
        r,
        m,
        alpha,
        p2,
    })
}

fn alpha_zt2(alpha: &BackwardBundle, j: usize, k: usize, m: usize) -> f64 {
    alpha.zt2_at(j, k)[m]
}
