//! The density process between the physical and the reference measure,
//! measure-relation transforms for driver paths, and martingale
//! diagnostics.

use rayon::prelude::*;

use crate::drivers::Drivers;
use crate::error::{Error, Result};
use crate::forward::{ForwardPath, FrozenBackward};
use crate::problem::{Control, FbsdepProblem, Measure};
use crate::stats::mean_se;

/// Density path with `gamma(0) = 1`, kept in log space for the continuous
/// part so coarse steps cannot lose positivity.
#[derive(Debug, Clone)]
pub struct GammaPath {
    pub values: Vec<f64>,
    pub log_values: Vec<f64>,
}

impl GammaPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Simulates the density process
/// `d gamma = gamma sigma3^{-1} b2 dW2 + int gamma_- (lambda - 1) dN2~`.
///
/// The continuous part integrates in log space with the Ito correction
/// `-(sigma3^{-1} b2)^2 dt / 2`; events multiply by `lambda` evaluated at
/// the strict left limit of the state; the jump compensator contributes
/// `-int (lambda - 1) nu2 dt` to the log drift.
pub fn simulate_gamma_tilde(
    problem: &FbsdepProblem,
    control: &Control,
    x_path: &ForwardPath,
    frozen: Option<&FrozenBackward>,
    drivers: &Drivers,
) -> Result<GammaPath> {
    let grid = &drivers.grid;
    let n = grid.n_steps();
    let default_frozen = FrozenBackward::default();
    let frozen = frozen.unwrap_or(&default_frozen);

    let mut log_values = Vec::with_capacity(n + 1);
    log_values.push(0.0);
    let mut log_g = 0.0;
    let mut ev_seen = 0usize;
    for k in 0..n {
        let t = grid.node(k);
        let dt = grid.dt(k);
        let u = control.at_step(k);
        let x = x_path.values[k];

        let theta = {
            let mut a = crate::problem::ThetaArgs::at(t, x, u);
            if !frozen.y.is_empty() {
                a.y = frozen.y[k];
                a.z1 = frozen.z1[k];
                a.z2 = frozen.z2[k];
                a.zeta1 = frozen.zeta1[k];
                a.zeta2 = frozen.zeta2[k];
            }
            a
        };
        let drift_loading = (problem.obs_drift)(&theta) / (problem.obs_vol)(t);

        let mut comp = 0.0;
        for m in 0..problem.ms2.len() {
            let e = problem.ms2.mark(m);
            let lam = (problem.tilt)(t, x, e);
            if !(lam > 0.0 && lam < 1.0) {
                return Err(Error::InvalidTilt {
                    t,
                    mark: m,
                    value: lam,
                });
            }
            comp += (lam - 1.0) * problem.ms2.weight(m);
        }

        log_g += drift_loading * drivers.dw2(k) - 0.5 * drift_loading * drift_loading * dt
            - comp * dt;

        for ev in drivers.jumps2.in_step(k) {
            let x_pre = x_path.pre_jump2[ev_seen];
            ev_seen += 1;
            let lam = (problem.tilt)(ev.time, x_pre, drivers.ms2.mark(ev.mark));
            if !(lam > 0.0 && lam < 1.0) {
                return Err(Error::InvalidTilt {
                    t: ev.time,
                    mark: ev.mark,
                    value: lam,
                });
            }
            log_g += lam.ln();
        }
        if !log_g.is_finite() {
            return Err(Error::NumericDivergence {
                what: "density log",
                step: k,
            });
        }
        log_values.push(log_g);
    }

    let values = log_values.iter().map(|l| l.exp()).collect();
    Ok(GammaPath { values, log_values })
}

/// Transforms the Brownian path in `drivers` between the two measures:
/// towards `Reference` adds the drift `sigma3^{-1} b2 dt` to build `W2` out
/// of the physical-measure path; towards `Physical` removes it. Jump events
/// are untouched (the same events serve both measures; integrators choose
/// the compensator from the target measure).
pub fn apply_measure_relations(
    drivers: &Drivers,
    problem: &FbsdepProblem,
    x_path: &ForwardPath,
    control: &Control,
    target: Measure,
) -> Drivers {
    let grid = &drivers.grid;
    let n = grid.n_steps();
    let mut out = drivers.clone();
    let sign = match target {
        Measure::Reference => 1.0,
        Measure::Physical => -1.0,
    };
    let mut shift = 0.0;
    for k in 0..n {
        let t = grid.node(k);
        let theta = crate::problem::ThetaArgs::at(t, x_path.values[k], control.at_step(k));
        let loading = (problem.obs_drift)(&theta) / (problem.obs_vol)(t);
        shift += sign * loading * grid.dt(k);
        out.w2[k + 1] = drivers.w2[k + 1] + shift;
    }
    out
}

/// Summary of the density's martingale property across a path bundle.
#[derive(Debug, Clone)]
pub struct GammaCheck {
    /// Fractions of the horizon where the bundle was summarized.
    pub checkpoints: Vec<f64>,
    pub means: Vec<f64>,
    /// Standard errors; `None` for degenerate (single-path) bundles.
    pub ses: Vec<Option<f64>>,
    pub max: f64,
    pub min: f64,
}

impl GammaCheck {
    /// True when every checkpoint mean is within `z * SE` of one.
    pub fn passes(&self, z: f64) -> bool {
        self.means.iter().zip(&self.ses).all(|(m, se)| match se {
            Some(se) => (m - 1.0).abs() <= z * se,
            None => true,
        })
    }
}

/// Means and standard errors of the density at the terminal time and two
/// interior checkpoints.
pub fn check_gamma_martingale(paths: &[GammaPath]) -> GammaCheck {
    assert!(!paths.is_empty(), "empty density bundle");
    let n = paths[0].values.len() - 1;
    let checkpoints = vec![1.0 / 3.0, 2.0 / 3.0, 1.0];
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for &frac in &checkpoints {
        let k = ((n as f64) * frac).round() as usize;
        let vals: Vec<f64> = paths.par_iter().map(|p| p.values[k]).collect();
        let (m, se) = mean_se(&vals);
        means.push(m);
        ses.push(se);
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for p in paths {
        for &v in &p.values {
            max = max.max(v);
            min = min.min(v);
        }
    }
    GammaCheck {
        checkpoints,
        means,
        ses,
        max,
        min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{sample_driver_bundle, sample_drivers};
    use crate::forward::simulate_forward;
    use crate::grid::TimeGrid;
    use crate::marks::MarkSpace;

    fn spaces() -> (MarkSpace, MarkSpace) {
        (
            MarkSpace::empty(),
            MarkSpace::new(vec![-0.8, 0.6, 1.5], vec![0.9, 0.6, 0.5]).unwrap(),
        )
    }

    fn flat_path(n: usize, x0: f64, d: &Drivers) -> ForwardPath {
        ForwardPath {
            values: vec![x0; n + 1],
            pre_jump1: vec![x0; d.jumps1.len()],
            pre_jump2: vec![x0; d.jumps2.len()],
        }
    }

    #[test]
    fn identity_measure_change() {
        let grid = TimeGrid::uniform(1.0, 40).unwrap();
        let (ms1, ms2) = spaces();
        let mut problem = FbsdepProblem::zeroed(0.0, ms1.clone(), ms2.clone());
        problem.tilt = Box::new(|_, _, _| 1.0 - 1e-12);
        let d = sample_drivers(&grid, &ms1, &ms2, 1, 0).unwrap();
        let control = Control::constant(0.0, 40);
        let x = flat_path(40, 0.0, &d);
        let g = simulate_gamma_tilde(&problem, &control, &x, None, &d).unwrap();
        assert!(g.values.iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn pure_compensator_closed_form() {
        // b2 = 0, lambda = 1/2, mass 2, T = 1, no events -> gamma_T = e
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let ms2 = MarkSpace::new(vec![0.0, 1.0], vec![1.5, 0.5]).unwrap();
        let mut problem = FbsdepProblem::zeroed(0.0, MarkSpace::empty(), ms2.clone());
        problem.tilt = Box::new(|_, _, _| 0.5);
        // craft a driver realization with no second-train events
        let mut d = sample_drivers(&grid, &MarkSpace::empty(), &ms2, 3, 0).unwrap();
        d.jumps2 = crate::marks::JumpTrain::empty(&grid);
        let control = Control::constant(0.0, 50);
        let x = flat_path(50, 0.0, &d);
        let g = simulate_gamma_tilde(&problem, &control, &x, None, &d).unwrap();
        assert!(
            (g.terminal() - 1.0f64.exp()).abs() < 1e-10,
            "gamma_T {}",
            g.terminal()
        );
    }

    #[test]
    fn martingale_mean_one() {
        let grid = TimeGrid::uniform(1.0, 60).unwrap();
        let (ms1, ms2) = spaces();
        let mut problem = FbsdepProblem::zeroed(0.0, ms1.clone(), ms2.clone());
        problem.obs_drift = Box::new(|a| 0.4 + 0.1 * a.t);
        problem.tilt = Box::new(|_, _, e| 0.6 + 0.2 / (1.0 + e * e));
        let control = Control::constant(0.0, 60);
        let bundle = sample_driver_bundle(&grid, &ms1, &ms2, 9, 30_000).unwrap();
        let paths: Vec<GammaPath> = bundle
            .par_iter()
            .map(|d| {
                let x = flat_path(60, 0.0, d);
                simulate_gamma_tilde(&problem, &control, &x, None, d).unwrap()
            })
            .collect();
        let check = check_gamma_martingale(&paths);
        assert!(
            check.passes(3.0),
            "means {:?} ses {:?}",
            check.means,
            check.ses
        );
        assert!(check.min > 0.0);
    }

    #[test]
    fn single_path_summary_has_no_se() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let (ms1, ms2) = spaces();
        let problem = FbsdepProblem::zeroed(0.0, ms1.clone(), ms2.clone());
        let d = sample_drivers(&grid, &ms1, &ms2, 5, 0).unwrap();
        let control = Control::constant(0.0, 10);
        let x = flat_path(10, 0.0, &d);
        let g = simulate_gamma_tilde(&problem, &control, &x, None, &d).unwrap();
        let check = check_gamma_martingale(&[g]);
        assert!(check.ses.iter().all(|se| se.is_none()));
    }

    #[test]
    fn invalid_tilt_is_reported() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let (ms1, ms2) = spaces();
        let mut problem = FbsdepProblem::zeroed(0.0, ms1.clone(), ms2.clone());
        problem.tilt = Box::new(|_, _, _| 1.2);
        let d = sample_drivers(&grid, &ms1, &ms2, 5, 0).unwrap();
        let control = Control::constant(0.0, 10);
        let x = flat_path(10, 0.0, &d);
        let err = simulate_gamma_tilde(&problem, &control, &x, None, &d).unwrap_err();
        assert!(matches!(err, Error::InvalidTilt { .. }));
    }

    #[test]
    fn measure_relation_roundtrip() {
        let grid = TimeGrid::uniform(1.0, 30).unwrap();
        let (ms1, ms2) = spaces();
        let mut problem = FbsdepProblem::zeroed(0.5, ms1.clone(), ms2.clone());
        problem.b1 = Box::new(|_, x, _| 0.2 * x);
        problem.sigma1 = Box::new(|_, _, _| 0.3);
        problem.obs_drift = Box::new(|a| 0.7 * a.x - 0.2);
        let d = sample_drivers(&grid, &ms1, &ms2, 11, 0).unwrap();
        let control = Control::constant(0.0, 30);
        let x = simulate_forward(&problem, &control, &d, Measure::Reference, None).unwrap();
        let to_ref = apply_measure_relations(&d, &problem, &x, &control, Measure::Reference);
        let back = apply_measure_relations(&to_ref, &problem, &x, &control, Measure::Physical);
        let max_dev = d
            .w2
            .iter()
            .zip(&back.w2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-12, "roundtrip deviation {max_dev}");
        // identity when the drift loading vanishes
        problem.obs_drift = Box::new(|_| 0.0);
        let same = apply_measure_relations(&d, &problem, &x, &control, Measure::Reference);
        assert_eq!(same.w2, d.w2);
        // constant drift shifts each increment by loading * dt
        problem.obs_drift = Box::new(|_| 0.5);
        let shifted = apply_measure_relations(&d, &problem, &x, &control, Measure::Reference);
        for k in 0..30 {
            let inc = (shifted.w2[k + 1] - shifted.w2[k]) - d.dw2(k);
            assert!((inc - 0.5 * grid.dt(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn change_of_measure_identity_for_test_functionals() {
        // E[gamma_T f(W2~_T)] under Reference sampling should equal the
        // plain Gaussian expectation of f, since W2~ is standard under the
        // physical measure.
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let (ms1, ms2) = spaces();
        let mut problem = FbsdepProblem::zeroed(0.0, ms1.clone(), ms2.clone());
        problem.obs_drift = Box::new(|_| 0.6);
        problem.tilt = Box::new(|_, _, _| 0.8);
        let control = Control::constant(0.0, 50);
        let bundle = sample_driver_bundle(&grid, &ms1, &ms2, 23, 40_000).unwrap();
        let f = |w: f64| w.cos();
        let samples: Vec<f64> = bundle
            .par_iter()
            .map(|d| {
                let x = flat_path(50, 0.0, d);
                let g = simulate_gamma_tilde(&problem, &control, &x, None, d).unwrap();
                // under Reference drivers, W2~_T = W2_T - int sigma3^{-1} b2 dt
                let w_tilde = d.w2.last().unwrap() - 0.6 * grid.horizon();
                g.terminal() * f(w_tilde)
            })
            .collect();
        let (mean, se) = mean_se(&samples);
        // E cos(Z), Z ~ N(0,1): e^{-1/2}
        let expect = (-0.5f64).exp();
        assert!(
            (mean - expect).abs() < 3.0 * se.unwrap(),
            "mean {mean} vs {expect}"
        );
    }
}
