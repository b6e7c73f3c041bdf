//! Finite-difference solver for the decoupling field of the uncontrolled
//! coupled system: implicit in the diffusion, explicit in the nonlocal jump
//! terms, backward from the terminal condition.

use rayon::prelude::*;

use crate::drivers::Drivers;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::picard::{solve_coupled_picard, BsdepBasis, FbsdepSolution};
use crate::problem::{Control, FbsdepProblem, ThetaArgs};

/// Space discretization for the field solver. Shifted arguments may leave
/// `[x_min, x_max]` by up to `pad` (handled by one-sided linear
/// extrapolation); beyond that the solve fails with `DomainOverflow`.
#[derive(Debug, Clone, Copy)]
pub struct SpaceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub pad: f64,
}

/// The decoupling field tabulated on time x space, with piecewise-linear
/// interpolation in space.
#[derive(Debug, Clone)]
pub struct DecouplingField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// `theta[k][i]` = field value at `(times[k], xs[i])`.
    pub theta: Vec<Vec<f64>>,
    pub pad: f64,
}

impl DecouplingField {
    fn interp_row(&self, row: &[f64], x: f64) -> Result<f64> {
        let xs = &self.xs;
        let dx = xs[1] - xs[0];
        if x < xs[0] - self.pad || x > xs[xs.len() - 1] + self.pad {
            return Err(Error::DomainOverflow { t: f64::NAN, x });
        }
        if x <= xs[0] {
            let slope = (row[1] - row[0]) / dx;
            return Ok(row[0] + slope * (x - xs[0]));
        }
        let last = xs.len() - 1;
        if x >= xs[last] {
            let slope = (row[last] - row[last - 1]) / dx;
            return Ok(row[last] + slope * (x - xs[last]));
        }
        let i = (((x - xs[0]) / dx).floor() as usize).min(last - 1);
        let w = (x - xs[i]) / dx;
        Ok(row[i] * (1.0 - w) + row[i + 1] * w)
    }

    /// Field value at time node `k`.
    pub fn eval_node(&self, k: usize, x: f64) -> Result<f64> {
        self.interp_row(&self.theta[k], x)
    }

    /// Field value at the nearest time node to `t`.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap()
            })
            .map(|(k, _)| k)
            .unwrap();
        self.eval_node(k, x)
    }

    /// Central-difference space derivative at node `k`.
    pub fn dx_node(&self, k: usize, x: f64) -> Result<f64> {
        let h = self.xs[1] - self.xs[0];
        Ok((self.eval_node(k, x + h)? - self.eval_node(k, x - h)?) / (2.0 * h))
    }
}

fn tridiag_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    rhs[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = d[i] - c[i] * rhs[i + 1];
    }
}

/// Solves the field equation for the uncontrolled problem (`u = 0`)
/// backward from `theta(T, x) = phi(x)`.
pub fn solve_decoupling_field(
    problem: &FbsdepProblem,
    space: SpaceGrid,
    grid: &TimeGrid,
) -> Result<DecouplingField> {
    if space.n_points < 3 || !(space.x_max > space.x_min) {
        return Err(Error::InvalidArgument(
            "space grid needs x_max > x_min and at least 3 points".into(),
        ));
    }
    let m = space.n_points;
    let dx = (space.x_max - space.x_min) / (m - 1) as f64;
    let xs: Vec<f64> = (0..m).map(|i| space.x_min + dx * i as f64).collect();
    let n = grid.n_steps();

    let mut field = DecouplingField {
        times: grid.nodes().to_vec(),
        xs: xs.clone(),
        theta: vec![vec![0.0; m]; n + 1],
        pad: space.pad,
    };
    field.theta[n] = xs.iter().map(|&x| (problem.terminal)(x)).collect();

    for k in (0..n).rev() {
        let t_next = grid.node(k + 1);
        let t_cur = grid.node(k);
        let dt = grid.dt(k);
        let prev = field.theta[k + 1].clone();

        // explicit pieces at every space node from theta(t_{k+1})
        struct NodeEval {
            drift: f64,
            grad: f64,
            reaction: f64,
            sig_sq: f64,
        }
        let evals: Vec<NodeEval> = (0..m)
            .into_par_iter()
            .map(|i| -> Result<NodeEval> {
                let x = xs[i];
                let grad = if i == 0 {
                    (prev[1] - prev[0]) / dx
                } else if i == m - 1 {
                    (prev[m - 1] - prev[m - 2]) / dx
                } else {
                    (prev[i + 1] - prev[i - 1]) / (2.0 * dx)
                };
                let theta_here = prev[i];
                let shift = |space_ms: &crate::marks::MarkSpace,
                             f: &dyn Fn(f64, f64) -> f64|
                 -> Result<(f64, f64)> {
                    // returns (sum (theta(x+f)-theta) nu, same thing; kept
                    // once for both the generator argument and the
                    // nonlocal reaction)
                    let mut acc = 0.0;
                    for mm in 0..space_ms.len() {
                        let e = space_ms.mark(mm);
                        let xf = x + f(t_next, e);
                        let shifted = field_interp(&xs, &prev, xf, dx, space.pad)
                            .ok_or(Error::DomainOverflow { t: t_next, x: xf })?;
                        acc += (shifted - theta_here) * space_ms.weight(mm);
                    }
                    Ok((acc, acc))
                };
                let (zeta1, _) = shift(&problem.ms1, &|t, e| (problem.f1)(t, x, 0.0, e))?;
                let (zeta2, _) = shift(&problem.ms2, &|t, e| (problem.f2)(t, x, 0.0, e))?;
                let args = ThetaArgs {
                    t: t_next,
                    x,
                    y: theta_here,
                    z1: grad * (problem.sigma1)(t_next, x, 0.0),
                    z2: grad * (problem.sigma2)(t_next, x, 0.0),
                    zeta1,
                    zeta2,
                    u: 0.0,
                };
                let comp1 = problem.ms1.integrate(|e| (problem.f1)(t_next, x, 0.0, e));
                let comp2 = problem.ms2.integrate(|e| (problem.f2)(t_next, x, 0.0, e));
                let drift = problem.tilde_b1(&args) - comp1 - comp2;
                let reaction = (problem.gen)(&args) + zeta1 + zeta2;
                let s1 = (problem.sigma1)(t_cur, x, 0.0);
                let s2 = (problem.sigma2)(t_cur, x, 0.0);
                Ok(NodeEval {
                    drift,
                    grad,
                    reaction,
                    sig_sq: s1 * s1 + s2 * s2,
                })
            })
            .collect::<Result<_>>()?;

        let mut row = vec![0.0; m];
        // edges: linear in space there, so diffusion drops and the update
        // is explicit with one-sided gradients
        row[0] = prev[0] + dt * (evals[0].drift * evals[0].grad + evals[0].reaction);
        row[m - 1] =
            prev[m - 1] + dt * (evals[m - 1].drift * evals[m - 1].grad + evals[m - 1].reaction);

        // interior: implicit diffusion and advection
        let mi = m - 2;
        let mut lower = vec![0.0; mi];
        let mut diag = vec![0.0; mi];
        let mut upper = vec![0.0; mi];
        let mut rhs = vec![0.0; mi];
        for (idx, i) in (1..m - 1).enumerate() {
            let a = 0.5 * evals[i].sig_sq / (dx * dx);
            let c = evals[i].drift / (2.0 * dx);
            lower[idx] = -dt * (a - c);
            diag[idx] = 1.0 + 2.0 * dt * a;
            upper[idx] = -dt * (a + c);
            rhs[idx] = prev[i] + dt * evals[i].reaction;
        }
        rhs[0] -= lower[0] * row[0];
        rhs[mi - 1] -= upper[mi - 1] * row[m - 1];
        lower[0] = 0.0;
        upper[mi - 1] = 0.0;
        tridiag_solve(&lower, &diag, &upper, &mut rhs);
        row[1..(mi + 1)].copy_from_slice(&rhs[..mi]);

        for (i, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NumericError(format!(
                    "field value not finite at t={t_cur}, x={}",
                    xs[i]
                )));
            }
        }
        field.theta[k] = row;
    }
    Ok(field)
}

fn field_interp(xs: &[f64], row: &[f64], x: f64, dx: f64, pad: f64) -> Option<f64> {
    let last = xs.len() - 1;
    if x < xs[0] - pad || x > xs[last] + pad {
        return None;
    }
    if x <= xs[0] {
        let slope = (row[1] - row[0]) / dx;
        return Some(row[0] + slope * (x - xs[0]));
    }
    if x >= xs[last] {
        let slope = (row[last] - row[last - 1]) / dx;
        return Some(row[last] + slope * (x - xs[last]));
    }
    let i = (((x - xs[0]) / dx).floor() as usize).min(last - 1);
    let w = (x - xs[i]) / dx;
    Some(row[i] * (1.0 - w) + row[i + 1] * w)
}

/// Residual of the field relation against an independent regression solve:
/// `max over paths and nodes of |y_t - theta(t, x_t)|`, with the backward
/// components coming from the fixed-point solver on the same drivers.
pub fn decoupling_residual(
    problem: &FbsdepProblem,
    field: &DecouplingField,
    drivers: &[Drivers],
    basis: BsdepBasis,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, FbsdepSolution)> {
    let n = drivers[0].grid.n_steps();
    let controls = [Control::constant(0.0, n)];
    let sol = solve_coupled_picard(problem, &controls, drivers, basis, tol, max_iter)?;
    let mut worst = 0.0f64;
    for j in 0..drivers.len() {
        for k in 0..=n {
            let theta = field.eval_node(k, sol.forward[j].values[k])?;
            worst = worst.max((sol.backward.value(j, k) - theta).abs());
        }
    }
    Ok((worst, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::sample_driver_bundle;
    use crate::marks::MarkSpace;

    fn space() -> SpaceGrid {
        SpaceGrid {
            x_min: -3.0,
            x_max: 4.0,
            n_points: 141,
            pad: 2.0,
        }
    }

    #[test]
    fn constant_terminal_constant_field() {
        let ms = MarkSpace::new(vec![0.5], vec![1.0]).unwrap();
        let mut p = FbsdepProblem::zeroed(0.5, ms.clone(), ms.clone());
        p.terminal = Box::new(|_| 2.0);
        p.sigma1 = Box::new(|_, _, _| 0.3);
        p.f1 = Box::new(|_, _, _, e| 0.2 * e);
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let field = solve_decoupling_field(&p, space(), &grid).unwrap();
        for row in &field.theta {
            for &v in row {
                assert!((v - 2.0).abs() < 1e-10, "field {v}");
            }
        }
    }

    #[test]
    fn affine_drift_closed_form() {
        // g = 0, phi(x) = x, f_i = 0, sigma state-independent,
        // drift b(t) = 0.4 + 0.2 t: theta(t,x) = x + int_t^T b
        let ms = MarkSpace::empty();
        let mut p = FbsdepProblem::zeroed(0.0, ms.clone(), ms.clone());
        p.terminal = Box::new(|x| x);
        p.b1 = Box::new(|t, _, _| 0.4 + 0.2 * t);
        p.sigma1 = Box::new(|_, _, _| 0.5);
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let field = solve_decoupling_field(&p, space(), &grid).unwrap();
        for (k, &t) in grid.nodes().iter().enumerate() {
            let integral = 0.4 * (1.0 - t) + 0.1 * (1.0 - t * t);
            for (i, &x) in field.xs.iter().enumerate() {
                let expect = x + integral;
                assert!(
                    (field.theta[k][i] - expect).abs() < 2e-3,
                    "theta({t},{x}) = {} vs {expect}",
                    field.theta[k][i]
                );
            }
        }
    }

    #[test]
    fn domain_overflow_detected() {
        let ms = MarkSpace::new(vec![1.0], vec![1.0]).unwrap();
        let mut p = FbsdepProblem::zeroed(0.0, ms.clone(), MarkSpace::empty());
        p.terminal = Box::new(|x| x);
        p.f1 = Box::new(|_, _, _, _| 50.0);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let err = solve_decoupling_field(&p, space(), &grid).unwrap_err();
        assert!(matches!(err, Error::DomainOverflow { .. }));
    }

    #[test]
    fn relation_residual_small_on_linear_problem() {
        let ms1 = MarkSpace::new(vec![-1.0, 0.4], vec![0.6, 0.4]).unwrap();
        let ms2 = MarkSpace::new(vec![0.7], vec![0.5]).unwrap();
        let mut p = FbsdepProblem::zeroed(0.8, ms1.clone(), ms2.clone());
        p.b1 = Box::new(|_, x, _| 0.1 * x);
        p.sigma1 = Box::new(|_, _, _| 0.3);
        p.sigma2 = Box::new(|_, _, _| 0.2);
        p.f1 = Box::new(|_, _, _, e| 0.1 * e);
        p.f2 = Box::new(|_, _, _, e| 0.08 * e);
        p.gen = Box::new(|a| 0.2 * a.x + 0.1 * a.y + 0.05 * a.zeta1);
        p.terminal = Box::new(|x| 0.7 * x + 0.2);
        p.tilt = Box::new(|_, _, _| 0.8);
        let grid = TimeGrid::uniform(0.5, 50).unwrap();
        let field = solve_decoupling_field(&p, space(), &grid).unwrap();
        let drivers = sample_driver_bundle(&grid, &ms1, &ms2, 3, 800).unwrap();
        let (residual, _) =
            decoupling_residual(&p, &field, &drivers, BsdepBasis::default(), 1e-8, 30).unwrap();
        // linear problem: field and regression agree to discretization error
        let budget = 5.0 * (grid.dt(0) + (field.xs[1] - field.xs[0]));
        assert!(residual < budget, "residual {residual} budget {budget}");
    }
}
