//! Euler-Maruyama simulation of the forward state equation with jumps.

use crate::drivers::Drivers;
use crate::error::{Error, Result};
use crate::problem::{Control, FbsdepProblem, Measure, ThetaArgs};

/// Backward components frozen along one path, used to close the coupling
/// that enters the forward drift through the observation drift.
#[derive(Debug, Clone, Default)]
pub struct FrozenBackward {
    /// `y` at grid nodes (length n_steps + 1); empty means zero.
    pub y: Vec<f64>,
    /// `z1`, `z2` per step.
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Intensity-integrated jump loadings per step.
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<f64>,
}

impl FrozenBackward {
    fn args(&self, t: f64, x: f64, u: f64, k: usize) -> ThetaArgs {
        let pick = |v: &Vec<f64>, i: usize| if v.is_empty() { 0.0 } else { v[i] };
        ThetaArgs {
            t,
            x,
            y: pick(&self.y, k),
            z1: pick(&self.z1, k),
            z2: pick(&self.z2, k),
            zeta1: pick(&self.zeta1, k),
            zeta2: pick(&self.zeta2, k),
            u,
        }
    }
}

/// A simulated forward path: values at grid nodes plus the left limits seen
/// by each jump event (needed by predictable integrands such as the tilt).
#[derive(Debug, Clone)]
pub struct ForwardPath {
    pub values: Vec<f64>,
    /// `x` just before each event of the first train, in event order.
    pub pre_jump1: Vec<f64>,
    /// `x` just before each event of the second train, in event order.
    pub pre_jump2: Vec<f64>,
}

impl ForwardPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Simulates the forward equation with one Euler step per grid interval.
///
/// The Brownian and drift increment is applied first, then the step's jump
/// events in time order, each evaluated at the running left limit. The jump
/// compensator is folded into the drift: at the plain intensity under
/// `Measure::Reference` (where the drift is the corrected one) and at the
/// tilted intensity under `Measure::Physical` (raw drift, second train
/// compensated by `lambda nu2`).
pub fn simulate_forward(
    problem: &FbsdepProblem,
    control: &Control,
    drivers: &Drivers,
    measure: Measure,
    frozen: Option<&FrozenBackward>,
) -> Result<ForwardPath> {
    let grid = &drivers.grid;
    let n = grid.n_steps();
    assert_eq!(control.n_steps(), n, "control must cover every grid step");
    let default_frozen = FrozenBackward::default();
    let frozen = frozen.unwrap_or(&default_frozen);

    let mut values = Vec::with_capacity(n + 1);
    values.push(problem.x0);
    let mut pre_jump1 = Vec::with_capacity(drivers.jumps1.len());
    let mut pre_jump2 = Vec::with_capacity(drivers.jumps2.len());

    let mut x = problem.x0;
    for k in 0..n {
        let t = grid.node(k);
        let dt = grid.dt(k);
        let u = control.at_step(k);
        let args = frozen.args(t, x, u, k);

        let drift = match measure {
            Measure::Reference => problem.tilde_b1(&args),
            Measure::Physical => (problem.b1)(t, x, u),
        };
        // compensators of the two jump integrals
        let comp1 = problem.ms1.integrate(|e| (problem.f1)(t, x, u, e));
        let comp2 = match measure {
            Measure::Reference => problem.ms2.integrate(|e| (problem.f2)(t, x, u, e)),
            Measure::Physical => problem
                .ms2
                .integrate(|e| (problem.f2)(t, x, u, e) * (problem.tilt)(t, x, e)),
        };

        x += drift * dt - (comp1 + comp2) * dt
            + (problem.sigma1)(t, x, u) * drivers.dw1(k)
            + (problem.sigma2)(t, x, u) * drivers.dw2(k);

        // events inside (t_k, t_{k+1}], merged across trains in time order
        let ev1 = drivers.jumps1.in_step(k);
        let ev2 = drivers.jumps2.in_step(k);
        let (mut i1, mut i2) = (0usize, 0usize);
        while i1 < ev1.len() || i2 < ev2.len() {
            let take_first = match (ev1.get(i1), ev2.get(i2)) {
                (Some(a), Some(b)) => a.time <= b.time,
                (Some(_), None) => true,
                _ => false,
            };
            if take_first {
                let ev = ev1[i1];
                pre_jump1.push(x);
                x += (problem.f1)(ev.time, x, u, drivers.ms1.mark(ev.mark));
                i1 += 1;
            } else {
                let ev = ev2[i2];
                pre_jump2.push(x);
                x += (problem.f2)(ev.time, x, u, drivers.ms2.mark(ev.mark));
                i2 += 1;
            }
        }

        if !x.is_finite() {
            return Err(Error::NumericDivergence {
                what: "forward state",
                step: k,
            });
        }
        values.push(x);
    }

    Ok(ForwardPath {
        values,
        pre_jump1,
        pre_jump2,
    })
}

/// Observation path under the reference measure, where the drift cancels:
/// `dY = sigma3 dW2 + \int f3 dN2~ - \int f3 (lambda - 1) nu2 dt`.
pub fn simulate_observation(
    problem: &FbsdepProblem,
    x_path: &ForwardPath,
    drivers: &Drivers,
) -> Vec<f64> {
    let grid = &drivers.grid;
    let n = grid.n_steps();
    let mut y = Vec::with_capacity(n + 1);
    y.push(0.0);
    let mut ev_idx = 0usize;
    let mut cur = 0.0;
    for k in 0..n {
        let t = grid.node(k);
        let dt = grid.dt(k);
        let x = x_path.values[k];
        let comp = problem.ms2.integrate(|e| (problem.obs_jump)(t, e));
        let tilt_comp = problem
            .ms2
            .integrate(|e| (problem.obs_jump)(t, e) * ((problem.tilt)(t, x, e) - 1.0));
        cur += (problem.obs_vol)(t) * drivers.dw2(k) - (comp + tilt_comp) * dt;
        for ev in drivers.jumps2.in_step(k) {
            cur += (problem.obs_jump)(ev.time, drivers.ms2.mark(ev.mark));
            ev_idx += 1;
        }
        y.push(cur);
    }
    debug_assert_eq!(ev_idx, drivers.jumps2.len());
    y
}
