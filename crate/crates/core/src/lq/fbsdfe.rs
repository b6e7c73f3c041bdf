//! The observation-driven filter system of the LQ problem: joint
//! integration of the filter state and the density along one driver path,
//! the algebraic reconstruction of the backward estimates, and the exact
//! exponential form of the auxiliary process.

use crate::drivers::Drivers;
use crate::error::{Error, Result};
use crate::lq::{LqCoefficients, RiccatiBundle};

/// Observation-measurable estimates along one path.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub xhat: Vec<f64>,
    pub yhat: Vec<f64>,
    pub hhat: Vec<f64>,
    /// Second Brownian loading estimate, per step.
    pub zhat2: Vec<f64>,
    /// Second jump loading estimate, per step and mark.
    pub zthat2: Vec<f64>,
    pub n_steps: usize,
}

impl FilterState {
    pub fn zthat2_at(&self, k: usize, n_marks: usize) -> &[f64] {
        &self.zthat2[k * n_marks..(k + 1) * n_marks]
    }
}

/// `hhat(0) = 2 (1 - 2 pi3(0))^{-1} (pi1(0) x0 + eta(0))`.
pub fn hhat_initial(coeffs: &LqCoefficients, riccati: &RiccatiBundle) -> Result<f64> {
    let denom = 1.0 - 2.0 * riccati.pi3[0];
    if denom.abs() < 1e-12 {
        return Err(Error::SingularInitialization);
    }
    Ok(2.0 * (riccati.pi1[0] * coeffs.x0 + riccati.eta[0]) / denom)
}

/// Observation-measurable processes of one path that the feedback control
/// reads: the filter auxiliary `hhat`, the density, and the gain already
/// tabulated in the bundle.
#[derive(Debug, Clone)]
pub struct PathState {
    pub hhat: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Integrates `hhat` (Euler) and the density (exact log-space) jointly
/// along one driver path. Both are driven only by the second Brownian path
/// and the second jump train.
pub fn simulate_path_state(
    coeffs: &LqCoefficients,
    drivers: &Drivers,
    h0: f64,
) -> Result<PathState> {
    let grid = &drivers.grid;
    let n = grid.n_steps();
    let mut hhat = Vec::with_capacity(n + 1);
    let mut gamma = Vec::with_capacity(n + 1);
    hhat.push(h0);
    gamma.push(1.0);
    let mut h = h0;
    let mut log_g = 0.0;
    for k in 0..n {
        let t = grid.node(k);
        let dt = grid.dt(k);
        let comp16 = coeffs.sum2(t, |m| coeffs.g16.eval(t, m));
        h += h * (coeffs.g12.eval(t) - comp16) * dt + h * coeffs.g14.eval(t) * drivers.dw2(k);
        let loading = coeffs.obs_loading(t);
        let comp_tilt = coeffs.sum2(t, |m| coeffs.lambda11.eval(t, m) - 1.0);
        log_g += loading * drivers.dw2(k) - 0.5 * loading * loading * dt - comp_tilt * dt;
        for ev in drivers.jumps2.in_step(k) {
            h += coeffs.g16.eval(ev.time, ev.mark) * h;
            let lam = coeffs.lambda11.eval(ev.time, ev.mark);
            if !(lam > 0.0 && lam < 1.0) {
                return Err(Error::InvalidTilt {
                    t: ev.time,
                    mark: ev.mark,
                    value: lam,
                });
            }
            log_g += lam.ln();
        }
        if !h.is_finite() || !log_g.is_finite() {
            return Err(Error::NumericDivergence {
                what: "filter state",
                step: k,
            });
        }
        hhat.push(h);
        gamma.push(log_g.exp());
    }
    Ok(PathState { hhat, gamma })
}

/// Integrates the filter system along one driver path: `hhat` and `xhat`
/// by Euler steps against the observation noise, then the backward
/// estimates from the algebraic relations.
pub fn simulate_filter_fbsdfe(
    coeffs: &LqCoefficients,
    riccati: &RiccatiBundle,
    drivers: &Drivers,
) -> Result<FilterState> {
    let grid = &drivers.grid;
    let n = grid.n_steps();
    let n_marks = coeffs.ms2.len();
    let h0 = hhat_initial(coeffs, riccati)?;
    let state = simulate_path_state(coeffs, drivers, h0)?;

    let mut xhat = Vec::with_capacity(n + 1);
    xhat.push(coeffs.x0);
    let mut x = coeffs.x0;
    for k in 0..n {
        let t = grid.node(k);
        let dt = grid.dt(k);
        let gain = riccati.gain[k];
        let h = state.hhat[k];
        let drift =
            coeffs.drift_x(t) * x - 0.5 * coeffs.drift_u(t) * gain * h + coeffs.drift_const(t);
        let vol = coeffs.s21.eval(t) * x - 0.5 * coeffs.s22.eval(t) * gain * h
            + coeffs.s23.eval(t);
        let comp = coeffs.sum2(t, |m| coeffs.f21.eval(t, m) * x + coeffs.f22.eval(t, m));
        x += drift * dt + vol * drivers.dw2(k) - comp * dt;
        for ev in drivers.jumps2.in_step(k) {
            x += coeffs.f21.eval(ev.time, ev.mark) * x + coeffs.f22.eval(ev.time, ev.mark);
        }
        if !x.is_finite() {
            return Err(Error::NumericDivergence {
                what: "filter mean",
                step: k,
            });
        }
        xhat.push(x);
    }

    let yhat: Vec<f64> = (0..=n)
        .map(|k| riccati.pi2[k] * xhat[k] + riccati.pi3[k] * state.hhat[k] + riccati.eta[k])
        .collect();
    let mut zhat2 = Vec::with_capacity(n);
    let mut zthat2 = Vec::with_capacity(n * n_marks);
    for k in 0..n {
        let t = grid.node(k);
        let pi2 = riccati.pi2[k];
        let pi3 = riccati.pi3[k];
        let gain = riccati.gain[k];
        zhat2.push(
            coeffs.s21.eval(t) * pi2 * xhat[k]
                + (pi3 * coeffs.g14.eval(t) - 0.5 * pi2 * coeffs.s22.eval(t) * gain)
                    * state.hhat[k]
                + coeffs.s23.eval(t) * pi2,
        );
        for m in 0..n_marks {
            zthat2.push(
                pi2 * coeffs.f21.eval(t, m) * xhat[k]
                    + coeffs.f22.eval(t, m) * pi2
                    + coeffs.g16.eval(t, m) * pi3 * state.hhat[k],
            );
        }
    }

    Ok(FilterState {
        xhat,
        yhat,
        hhat: state.hhat,
        zhat2,
        zthat2,
        n_steps: n,
    })
}

/// The exact exponential form of `hhat` along a driver path: the drift
/// carries `g12 - g14^2/2 + sum((ln(1+g16) - g16)) nu2`, the Brownian
/// integral loads `g14`, and the jump integral of `ln(1+g16)` runs against
/// the compensated measure — so per realized path the log increment is
/// `(g12 - g14^2/2 - sum g16 nu2) dt + g14 dW2 + sum ln(1+g16)` at events.
pub fn hhat_closed_form(coeffs: &LqCoefficients, drivers: &Drivers, h0: f64) -> Vec<f64> {
    let grid = &drivers.grid;
    let n = grid.n_steps();
    let mut out = Vec::with_capacity(n + 1);
    out.push(h0);
    let mut log_ratio = 0.0;
    for k in 0..n {
        let t = grid.node(k);
        let dt = grid.dt(k);
        let g14 = coeffs.g14.eval(t);
        let comp = coeffs.sum2(t, |m| coeffs.g16.eval(t, m));
        log_ratio += (coeffs.g12.eval(t) - 0.5 * g14 * g14 - comp) * dt + g14 * drivers.dw2(k);
        for ev in drivers.jumps2.in_step(k) {
            log_ratio += (1.0 + coeffs.g16.eval(ev.time, ev.mark)).ln();
        }
        out.push(h0 * log_ratio.exp());
    }
    out
}
