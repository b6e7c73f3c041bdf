//! The four backward ODEs of the LQ problem, integrated jointly by RK4.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lq::LqCoefficients;

/// Solutions of the backward ODE system on the grid nodes, plus the
/// density-free part of the feedback gain (the density factor is applied
/// at control evaluation).
#[derive(Debug, Clone)]
pub struct RiccatiBundle {
    pub times: Vec<f64>,
    pub pi1: Vec<f64>,
    pub pi2: Vec<f64>,
    pub pi3: Vec<f64>,
    pub eta: Vec<f64>,
    /// `gain(t) = l11^{-1} [s12 pi1 g13 + s22 pi1 g14 + g17 + drift_u pi1]`.
    pub gain: Vec<f64>,
}

impl RiccatiBundle {
    pub fn max_pi_diff(&self) -> f64 {
        self.pi1
            .iter()
            .zip(&self.pi2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

struct Rhs<'a> {
    c: &'a LqCoefficients,
}

impl Rhs<'_> {
    /// Bracket of the first ODE, grouped exactly as stated:
    /// `g12 + b11 - s3^{-1} b22 s21 + sum (g16 - lambda + 1) f21 nu2
    ///  + s11 g13 + s21 g14 + sum f11 g15 nu1`.
    fn a1(&self, t: f64) -> f64 {
        let c = self.c;
        let jump2 = c.sum2(t, |m| {
            (c.g16.eval(t, m) - c.lambda11.eval(t, m) + 1.0) * c.f21.eval(t, m)
        });
        let jump1 = c.sum1(t, |m| c.f11.eval(t, m) * c.g15.eval(t, m));
        c.g12.eval(t) + c.b11.eval(t) - c.obs_loading(t) * c.s21.eval(t)
            + jump2
            + c.s11.eval(t) * c.g13.eval(t)
            + c.s21.eval(t) * c.g14.eval(t)
            + jump1
    }

    /// Bracket of the second ODE, grouped as stated:
    /// `drift_x + g13 s11 + g14 s21 + sum g15 f11 nu1 + sum g16 f21 nu2 + g12`.
    fn a2(&self, t: f64) -> f64 {
        let c = self.c;
        c.drift_x(t)
            + c.g13.eval(t) * c.s11.eval(t)
            + c.g14.eval(t) * c.s21.eval(t)
            + c.sum1(t, |m| c.g15.eval(t, m) * c.f11.eval(t, m))
            + c.sum2(t, |m| c.g16.eval(t, m) * c.f21.eval(t, m))
            + c.g12.eval(t)
    }

    fn gain(&self, t: f64, pi1: f64) -> f64 {
        let c = self.c;
        (c.s12.eval(t) * pi1 * c.g13.eval(t)
            + c.s22.eval(t) * pi1 * c.g14.eval(t)
            + c.g17.eval(t)
            + c.drift_u(t) * pi1)
            / c.l11.eval(t)
    }

    /// Joint right-hand side for `(pi1, pi2, pi3, eta)`.
    fn eval(&self, t: f64, v: &[f64; 4]) -> [f64; 4] {
        let c = self.c;
        let [pi1, pi2, pi3, eta] = *v;
        let gain = self.gain(t, pi1);
        let g11 = c.g11.eval(t);
        let g12 = c.g12.eval(t);
        let d1 = -(self.a1(t) * pi1 + g11);
        let d2 = -(self.a2(t) * pi2 + g11);
        let b3 = 2.0 * g12
            + c.g13.eval(t).powi(2)
            + c.g14.eval(t).powi(2)
            + c.sum1(t, |m| c.g15.eval(t, m).powi(2))
            + c.sum2(t, |m| c.g16.eval(t, m).powi(2));
        let cu = c.drift_u(t) + c.g13.eval(t) * c.s12.eval(t) + c.g14.eval(t) * c.s22.eval(t);
        let d3 = -(b3 * pi3 - 0.5 * cu * gain * pi2 - 0.5 * c.g17.eval(t) * gain);
        let deta = -(g12 * eta
            + c.drift_const(t) * pi2
            + c.g13.eval(t) * c.s13.eval(t) * pi2
            + c.g14.eval(t) * c.s23.eval(t) * pi2
            + c.sum1(t, |m| c.g15.eval(t, m) * c.f12.eval(t, m)) * pi2
            + c.sum2(t, |m| c.g16.eval(t, m) * c.f22.eval(t, m)) * pi2
            + c.g18.eval(t));
        [d1, d2, d3, deta]
    }
}

/// Integrates the ODE system backward from the terminal conditions with
/// one RK4 step per grid interval.
pub fn solve_riccati_system(coeffs: &LqCoefficients, grid: &TimeGrid) -> Result<RiccatiBundle> {
    let rhs = Rhs { c: coeffs };
    let n = grid.n_steps();
    let mut pi1 = vec![0.0; n + 1];
    let mut pi2 = vec![0.0; n + 1];
    let mut pi3 = vec![0.0; n + 1];
    let mut eta = vec![0.0; n + 1];
    pi1[n] = coeffs.phi11;
    pi2[n] = coeffs.phi11;
    pi3[n] = 0.0;
    eta[n] = coeffs.phi12;

    let mut v = [coeffs.phi11, coeffs.phi11, 0.0, coeffs.phi12];
    for k in (0..n).rev() {
        let t1 = grid.node(k + 1);
        let h = -grid.dt(k);
        let k1 = rhs.eval(t1, &v);
        let mid = |state: &[f64; 4], deriv: &[f64; 4], frac: f64| {
            let mut s = *state;
            for i in 0..4 {
                s[i] += frac * h * deriv[i];
            }
            s
        };
        let k2 = rhs.eval(t1 + 0.5 * h, &mid(&v, &k1, 0.5));
        let k3 = rhs.eval(t1 + 0.5 * h, &mid(&v, &k2, 0.5));
        let k4 = rhs.eval(t1 + h, &mid(&v, &k3, 1.0));
        for i in 0..4 {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !v[i].is_finite() {
                return Err(Error::NumericError(format!(
                    "ODE state not finite at node {k}"
                )));
            }
        }
        pi1[k] = v[0];
        pi2[k] = v[1];
        pi3[k] = v[2];
        eta[k] = v[3];
    }

    let gain = grid
        .nodes()
        .iter()
        .zip(&pi1)
        .map(|(&t, &p)| rhs.gain(t, p))
        .collect();
    Ok(RiccatiBundle {
        times: grid.nodes().to_vec(),
        pi1,
        pi2,
        pi3,
        eta,
        gain,
    })
}
