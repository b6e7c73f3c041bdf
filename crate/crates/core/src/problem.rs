//! Problem description for the controlled forward-backward system with
//! jumps, and the control representation used by the simulators.

use crate::diff;
use crate::marks::MarkSpace;

/// Coefficient of `(t, x, u)`.
pub type StateCoef = Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Jump coefficient of `(t, x, u, e)`.
pub type JumpCoef = Box<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Scalar function of time.
pub type TimeCoef = Box<dyn Fn(f64) -> f64 + Send + Sync>;
/// Scalar function of `(t, e)`.
pub type MarkCoef = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Scalar function of one real argument.
pub type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;
/// Jump tilt `(t, x, e)`.
pub type TiltFn = Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Argument tuple for the generator, observation drift, and running cost:
/// `(t, x, y, z1, z2, zeta1, zeta2, u)` where `zeta_i` is the jump loading
/// integrated against the mark intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaArgs {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z1: f64,
    pub z2: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub u: f64,
}

impl ThetaArgs {
    pub fn at(t: f64, x: f64, u: f64) -> Self {
        Self {
            t,
            x,
            y: 0.0,
            z1: 0.0,
            z2: 0.0,
            zeta1: 0.0,
            zeta2: 0.0,
            u,
        }
    }
}

pub type ThetaCoef = Box<dyn Fn(&ThetaArgs) -> f64 + Send + Sync>;

/// Which probability measure the dynamics are written under.
///
/// Under `Reference` the observation is driftless, the second Brownian path
/// is a Brownian motion, and the second jump train compensates at its plain
/// intensity; the forward drift carries the full correction. Under
/// `Physical` the raw drift applies and the second train compensates at the
/// tilted intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Reference,
    Physical,
}

/// The controlled problem data: forward coefficients, generator and
/// terminal of the backward equation, observation model, jump tilt, and the
/// three cost pieces.
pub struct FbsdepProblem {
    pub x0: f64,
    pub ms1: MarkSpace,
    pub ms2: MarkSpace,
    pub b1: StateCoef,
    pub sigma1: StateCoef,
    pub sigma2: StateCoef,
    pub f1: JumpCoef,
    pub f2: JumpCoef,
    /// Generator of the backward equation.
    pub gen: ThetaCoef,
    /// Terminal condition `phi(x_T)`.
    pub terminal: ScalarFn,
    /// Observation drift; may depend on the full backward tuple.
    pub obs_drift: ThetaCoef,
    /// Observation volatility `sigma3(t)`; its inverse must stay bounded.
    pub obs_vol: TimeCoef,
    /// Observation jump loading `f3(t, e)`.
    pub obs_jump: MarkCoef,
    /// Jump intensity tilt `lambda(t, x, e)`, valued in `[l, 1)`.
    pub tilt: TiltFn,
    /// Running cost `l`.
    pub run_cost: ThetaCoef,
    /// Terminal cost `Phi(x_T)`.
    pub term_cost: ScalarFn,
    /// Initial cost `Gamma(y_0)`.
    pub init_cost: ScalarFn,
}

impl FbsdepProblem {
    /// A problem with every coefficient zero (terminal, costs, tilt
    /// included as the identity-measure defaults). Tests and constructors
    /// overwrite the fields they need.
    pub fn zeroed(x0: f64, ms1: MarkSpace, ms2: MarkSpace) -> Self {
        Self {
            x0,
            ms1,
            ms2,
            b1: Box::new(|_, _, _| 0.0),
            sigma1: Box::new(|_, _, _| 0.0),
            sigma2: Box::new(|_, _, _| 0.0),
            f1: Box::new(|_, _, _, _| 0.0),
            f2: Box::new(|_, _, _, _| 0.0),
            gen: Box::new(|_| 0.0),
            terminal: Box::new(|_| 0.0),
            obs_drift: Box::new(|_| 0.0),
            obs_vol: Box::new(|_| 1.0),
            obs_jump: Box::new(|_, _| 1.0),
            tilt: Box::new(|_, _, _| 1.0 - f64::EPSILON),
            run_cost: Box::new(|_| 0.0),
            term_cost: Box::new(|_| 0.0),
            init_cost: Box::new(|_| 0.0),
        }
    }

    /// Drift correction moving the dynamics to the reference measure:
    /// `b1 - int f2 (lambda - 1) nu2 - sigma3^{-1} sigma2 b2`, with the
    /// observation drift evaluated at the supplied backward tuple.
    pub fn tilde_b1(&self, args: &ThetaArgs) -> f64 {
        let jump_term = self.ms2.integrate(|e| {
            (self.f2)(args.t, args.x, args.u, e) * ((self.tilt)(args.t, args.x, e) - 1.0)
        });
        (self.b1)(args.t, args.x, args.u) - jump_term
            - (self.sigma2)(args.t, args.x, args.u) * (self.obs_drift)(args)
                / (self.obs_vol)(args.t)
    }

    /// `d(tilde_b1)/dx` holding the backward tuple fixed.
    pub fn tilde_b1_x(&self, args: &ThetaArgs) -> f64 {
        diff::d1(
            |x| {
                let mut a = *args;
                a.x = x;
                self.tilde_b1(&a)
            },
            args.x,
        )
    }
}

/// A control path: one value per grid step, constant on `(t_k, t_{k+1}]`
/// and evaluated at the left node.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    pub values: Vec<f64>,
}

impl Control {
    pub fn constant(value: f64, n_steps: usize) -> Self {
        Self {
            values: vec![value; n_steps],
        }
    }

    pub fn from_fn(n_steps: usize, f: impl Fn(usize) -> f64) -> Self {
        Self {
            values: (0..n_steps).map(f).collect(),
        }
    }

    pub fn at_step(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn n_steps(&self) -> usize {
        self.values.len()
    }
}
