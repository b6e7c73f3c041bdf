//! Central finite differences for coefficient derivatives.
//!
//! Step sizes are scaled to the argument so affine and quadratic
//! coefficients (the LQ benchmark) differentiate exactly up to rounding.

const H1: f64 = 1e-5;
const H2: f64 = 1e-4;

fn scale(x: f64) -> f64 {
    1.0f64.max(x.abs())
}

/// First derivative by central difference.
pub fn d1(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = H1 * scale(x);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Second derivative by central difference.
pub fn d2(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = H2 * scale(x);
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Directional second derivative `d^2/ds^2 f(base + s*dir)` at `s = 0`,
/// used for quadratic forms `dir^T D2f dir` without assembling a Hessian.
pub fn d2_directional(f: impl Fn(f64) -> f64, dir_norm: f64) -> f64 {
    if dir_norm == 0.0 {
        return 0.0;
    }
    let h = H2;
    (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_and_quadratic_are_exact() {
        let f = |x: f64| 3.0 * x + 1.0;
        assert!((d1(f, 2.0) - 3.0).abs() < 1e-9);
        assert!(d2(f, 2.0).abs() < 1e-5);
        let g = |x: f64| 0.5 * x * x - x;
        assert!((d1(g, 3.0) - 2.0).abs() < 1e-8);
        assert!((d2(g, 3.0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn smooth_nonlinearity() {
        let f = |x: f64| x.sin();
        assert!((d1(f, 0.7) - 0.7f64.cos()).abs() < 1e-8);
        assert!((d2(f, 0.7) + 0.7f64.sin()).abs() < 1e-5);
    }

    #[test]
    fn directional_quadratic_form() {
        // f(s) = (a + s u)^2 along u: second derivative 2 u^2
        let u = 1.7;
        let f = |s: f64| (2.0 + s * u) * (3.0 - s * u);
        let got = d2_directional(f, u.abs());
        assert!((got + 2.0 * u * u).abs() < 1e-4);
    }
}
