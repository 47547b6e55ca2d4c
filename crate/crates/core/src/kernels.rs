//! Closed-form Gaussian objects: the standard Gaussian `G`, the heat kernel
//! `Gamma`, the dipole, the half-line Dirichlet kernel and the weighted
//! shift integral `int |x|^2 |Gamma(t, x) - Gamma(t, x - v)| dx`.
//!
//! Exponentials are assembled in log space and exponentiated last so that
//! large times do not underflow the prefactor before the exponent is applied.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad::{integrate_with_breaks, Integral, Tolerance, TAIL_SIGMAS};

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("time must be positive and finite (got {t})")))
    }
}

/// `log G(y)` for a point at distance `y` from the origin in `R^d`.
pub fn ln_gaussian(d: usize, y: f64) -> f64 {
    -0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * y * y
}

/// Standard Gaussian density `(2 pi)^{-d/2} exp(-|y|^2 / 2)`.
pub fn gaussian(d: usize, y: f64) -> f64 {
    ln_gaussian(d, y).exp()
}

/// `log Gamma(t, x)`; `t` is not checked.
pub fn ln_heat_gamma_unchecked(d: usize, t: f64, x: f64) -> f64 {
    -0.5 * d as f64 * (4.0 * PI * t).ln() - x * x / (4.0 * t)
}

/// Full-space heat kernel `(4 pi t)^{-d/2} exp(-|x|^2 / (4t))`.
pub fn heat_gamma(d: usize, t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    Ok(ln_heat_gamma_unchecked(d, t, x).exp())
}

/// Dipole `D(t, x) = (x / 2t) Gamma(t, x)` on the half-line `x >= 0`.
pub fn dipole(t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    if x < 0.0 {
        return Err(Error::OutsideDomain { point: x, boundary: 0.0 });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok((x.ln() - (2.0 * t).ln() + ln_heat_gamma_unchecked(1, t, x)).exp())
}

/// Dirichlet heat kernel of `(x0, inf)`: `Gamma(t, x - y) - Gamma(t, x + y - 2 x0)`.
///
/// Evaluated as `Gamma(t, x - y) * (1 - exp(-(x - x0)(y - x0) / t))` so that
/// the subtraction never cancels.
pub fn halfline_kernel(t: f64, x: f64, y: f64, x0: f64) -> Result<f64> {
    check_time(t)?;
    for p in [x, y] {
        if !(p >= x0) {
            return Err(Error::OutsideDomain { point: p, boundary: x0 });
        }
    }
    Ok(halfline_kernel_unchecked(t, x, y, x0))
}

pub(crate) fn halfline_kernel_unchecked(t: f64, x: f64, y: f64, x0: f64) -> f64 {
    let z = (x - x0) * (y - x0) / t;
    let image_factor = -(-z).exp_m1();
    ln_heat_gamma_unchecked(1, t, x - y).exp() * image_factor
}

/// `int_{R^d} |x|^2 |Gamma(t, x) - Gamma(t, x - v e)| dx` for a unit vector `e`.
///
/// With `s` the coordinate along `e`, both kernels factor as a 1-D kernel in
/// `s` times the same `(d-1)`-dimensional kernel in the orthogonal variables.
/// The integral therefore reduces to
/// `int s^2 |D(s)| ds + 2t(d-1) int |D(s)| ds`, `D(s) = Gamma_1(t, s) - Gamma_1(t, s - v)`,
/// both computed by 1-D adaptive quadrature split at the sign change `s = v/2`.
pub fn gamma_shift_weighted_l1(d: usize, t: f64, v: f64) -> Result<Integral> {
    check_time(t)?;
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!(
            "displacement must be nonnegative and finite (got {v})"
        )));
    }
    if v == 0.0 {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let sd = (2.0 * t).sqrt();
    let lo = -TAIL_SIGMAS * sd;
    let hi = v + TAIL_SIGMAS * sd;
    let diff = |s: f64| {
        // Gamma_1(s) - Gamma_1(s - v) = Gamma_1(s) * (1 - exp((2 s v - v^2) / 4t))
        let e = (2.0 * s * v - v * v) / (4.0 * t);
        (ln_heat_gamma_unchecked(1, t, s).exp() * -e.exp_m1()).abs()
    };
    let mut breaks = vec![lo];
    let mid = 0.5 * v;
    let mut x = mid - sd;
    while x > lo {
        breaks.insert(1, x);
        x -= sd;
    }
    breaks.push(mid);
    let mut x = mid + sd;
    while x < hi {
        breaks.push(x);
        x += sd;
    }
    breaks.push(hi);
    let tol = Tolerance::new(0.0, 1e-11);
    let second = integrate_with_breaks(|s| s * s * diff(s), &breaks, tol)?;
    let zeroth = integrate_with_breaks(diff, &breaks, tol)?;
    let perp = 2.0 * t * (d as f64 - 1.0);
    Ok(Integral {
        value: second.value + perp * zeroth.value,
        error: second.error + perp * zeroth.error,
        evaluations: second.evaluations + zeroth.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_values() {
        assert_relative_eq!(gaussian(1, 0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(gaussian(2, 0.0), 0.159_154_943_091_895_34, epsilon = 1e-15);
        assert_eq!(gaussian(1, 1e3), 0.0);
    }

    #[test]
    fn heat_gamma_values() {
        assert_relative_eq!(heat_gamma(1, 1.0, 0.0).unwrap(), 0.282_094_791_773_878_14, epsilon = 1e-15);
        let expected = (8.0 * PI).powf(-1.5) * (-1.0f64).exp();
        assert_relative_eq!(heat_gamma(3, 2.0, 8f64.sqrt()).unwrap(), expected, max_relative = 1e-14);
        assert!(heat_gamma(1, 0.0, 1.0).is_err());
        assert!(heat_gamma(1, -1.0, 1.0).is_err());
    }

    #[test]
    fn heat_gamma_is_scaled_gaussian() {
        for d in 1..5 {
            for &(t, x) in &[(0.3f64, 0.1), (2.0, 3.0), (1e4, 150.0)] {
                let s = (2.0 * t).sqrt();
                let scaled = s.powi(-(d as i32)) * gaussian(d, x / s);
                assert_relative_eq!(heat_gamma(d, t, x).unwrap(), scaled, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn large_time_does_not_underflow() {
        let v = heat_gamma(3, 1e200, 0.0).unwrap();
        assert!(v > 0.0);
        let k = halfline_kernel(1e6, 1.0, 1.0, 0.0).unwrap();
        assert!(k > 0.0);
    }

    #[test]
    fn dipole_values() {
        assert_eq!(dipole(1.0, 0.0).unwrap(), 0.0);
        let g = heat_gamma(1, 3.0, 2.0).unwrap();
        assert_relative_eq!(dipole(3.0, 2.0).unwrap(), 2.0 / 6.0 * g, max_relative = 1e-14);
        assert!(dipole(1.0, -1.0).is_err());
    }

    #[test]
    fn halfline_kernel_values() {
        let v = halfline_kernel(1.0, 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(v, (4.0 * PI).powf(-0.5) * (1.0 - (-1.0f64).exp()), max_relative = 1e-14);
        assert_relative_eq!(v, 0.178_317_917_418_729_5, epsilon = 1e-15);
        assert_eq!(
            halfline_kernel(1.0, 1.0, 2.0, 0.0).unwrap(),
            halfline_kernel(1.0, 2.0, 1.0, 0.0).unwrap()
        );
        assert_eq!(halfline_kernel(1.0, 1.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(halfline_kernel(1.0, -0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn shift_integral_zero_displacement() {
        for d in 1..4 {
            assert_eq!(gamma_shift_weighted_l1(d, 1.0, 0.0).unwrap().value, 0.0);
        }
    }

    #[test]
    fn shift_integral_scaling() {
        for d in 1..5 {
            let a = gamma_shift_weighted_l1(d, 1.0, 0.3).unwrap().value;
            let b = gamma_shift_weighted_l1(d, 4.0, 0.6).unwrap().value;
            assert_relative_eq!(b / a, 4.0, max_relative = 1e-9);
        }
    }
}
