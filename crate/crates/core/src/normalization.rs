//! Normalisation of the transient equilibria.
//!
//! `I_tau = int_{Omega_tau} phi(e^tau y)^2 G(y) dy` over the shrinking domain
//! `Omega_tau = e^{-tau} Omega`, `K_tau = 1 / I_tau`, and the time-variable
//! form `k_t = K_{log(2t)/2}`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ExteriorDomain, HarmonicProfile};
use crate::kernels::gaussian;
use crate::quad::{boundary_layer_breaks, integrate_with_breaks, Integral, Tolerance, TAIL_SIGMAS};

/// Quadrature tolerance for normalisation integrals.
pub const NORMALIZATION_TOL: Tolerance = Tolerance::new(1e-300, 1e-13);

/// `int_{Omega_tau} f(y) dy` for a radial integrand dominated by `G`.
///
/// `f` receives the rescaled coordinate `y` (signed on the half-line, a
/// radius otherwise); the surface measure is applied here. Panels are graded
/// geometrically toward the inner boundary `R e^{-tau}`.
pub fn integrate_rescaled<F: Fn(f64) -> f64>(
    profile: &HarmonicProfile,
    tau: f64,
    f: F,
    tol: Tolerance,
) -> Result<Integral> {
    let domain = profile.domain.scaled((-tau).exp());
    let d = domain.dim();
    let reach = TAIL_SIGMAS + (d as f64).sqrt();
    let inner = domain.inner_coordinate().max(-reach);
    let upper = inner.max(0.0) + reach;
    let breaks = boundary_layer_breaks(inner, upper);
    match domain {
        ExteriorDomain::HalfLine { .. } => integrate_with_breaks(f, &breaks, tol),
        _ => integrate_with_breaks(|r| f(r) * domain.radial_measure(r), &breaks, tol),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must be nonnegative and finite (got {tau})")))
    }
}

/// `I_tau` with its quadrature error estimate.
pub fn i_tau_integral(profile: &HarmonicProfile, tau: f64) -> Result<Integral> {
    check_tau(tau)?;
    let d = profile.dim();
    let s = tau.exp();
    integrate_rescaled(
        profile,
        tau,
        |y| {
            let p = profile.phi_extended(s * y);
            p * p * gaussian(d, y)
        },
        NORMALIZATION_TOL,
    )
}

pub fn i_tau(profile: &HarmonicProfile, tau: f64) -> Result<f64> {
    Ok(i_tau_integral(profile, tau)?.value)
}

/// `K_tau = 1 / I_tau`.
pub fn k_tau(profile: &HarmonicProfile, tau: f64) -> Result<f64> {
    Ok(1.0 / i_tau(profile, tau)?)
}

/// `k_t`, defined for `t >= 1/2` through `k_t = K_{log(2t)/2}`.
pub fn k_of_t(profile: &HarmonicProfile, t: f64) -> Result<f64> {
    if !(t >= 0.5 && t.is_finite()) {
        return Err(Error::invalid(format!("k_t is defined for t >= 1/2 (got {t})")));
    }
    k_tau(profile, 0.5 * (2.0 * t).ln())
}

/// `dI/dtau = 2 int phi(e^tau y) phi'(e^tau y) e^tau y G(y) dy`.
///
/// The moving boundary contributes nothing because `phi` vanishes there.
pub fn i_tau_prime_integral(profile: &HarmonicProfile, tau: f64) -> Result<Integral> {
    check_tau(tau)?;
    let d = profile.dim();
    let s = tau.exp();
    integrate_rescaled(
        profile,
        tau,
        |y| {
            let x = s * y;
            2.0 * profile.phi_extended(x) * profile.grad_phi_extended(x) * x * gaussian(d, y)
        },
        NORMALIZATION_TOL,
    )
}

pub fn i_tau_prime(profile: &HarmonicProfile, tau: f64) -> Result<f64> {
    Ok(i_tau_prime_integral(profile, tau)?.value)
}

/// `|K'_tau| / K_tau`, which equals `|I'_tau| / I_tau`.
pub fn kprime_over_k(profile: &HarmonicProfile, tau: f64) -> Result<f64> {
    Ok(i_tau_prime(profile, tau)?.abs() / i_tau(profile, tau)?)
}

/// Distance of `K_tau` from its large-`tau` asymptote, scaled by the
/// expected decay so that the result stays bounded:
/// `tau^3 |K - tau^{-2}|` in d = 2, `e^{(d-2) tau} |K - 1|` in d >= 3,
/// `|K - 2 e^{-2 tau}|` on the half-line with `x0 = 0`.
pub fn asymptote_residual(profile: &HarmonicProfile, tau: f64) -> Result<f64> {
    if tau < 2.0 {
        return Err(Error::invalid(format!("asymptote residual needs tau >= 2 (got {tau})")));
    }
    let k = k_tau(profile, tau)?;
    match profile.domain {
        ExteriorDomain::HalfLine { x0 } if x0 == 0.0 => Ok((k - 2.0 * (-2.0 * tau).exp()).abs()),
        ExteriorDomain::BallComplement { dim: 2, .. } => {
            Ok(tau.powi(3) * (k - tau.powi(-2)).abs())
        }
        ExteriorDomain::BallComplement { dim, .. } => {
            Ok(((dim as f64 - 2.0) * tau).exp() * (k - 1.0).abs())
        }
        _ => Err(Error::invalid(format!(
            "no asymptote is tabulated for {}",
            profile.domain
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalizationRow {
    pub tau: f64,
    pub i: f64,
    pub k: f64,
    pub i_prime: f64,
    /// Sum of the quadrature error estimates of `I` and `I'`.
    pub err: f64,
}

/// `tau -> (I, K, I')` over a list of `tau` values.
#[derive(Clone, Debug, Serialize)]
pub struct NormalizationTable {
    pub profile: HarmonicProfile,
    pub rows: Vec<NormalizationRow>,
}

impl NormalizationTable {
    pub fn build(profile: &HarmonicProfile, taus: &[f64]) -> Result<Self> {
        let rows = taus
            .par_iter()
            .map(|&tau| {
                let i = i_tau_integral(profile, tau)?;
                let ip = i_tau_prime_integral(profile, tau)?;
                Ok(NormalizationRow {
                    tau,
                    i: i.value,
                    k: 1.0 / i.value,
                    i_prime: ip.value,
                    err: i.error + ip.error,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { profile: *profile, rows })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tau,I,K,Iprime,err")?;
        for r in &self.rows {
            writeln!(out, "{:?},{:?},{:?},{:?},{:?}", r.tau, r.i, r.k, r.i_prime, r.err)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line() -> HarmonicProfile {
        HarmonicProfile::new(ExteriorDomain::half_line(0.0).unwrap())
    }

    fn ball(d: usize) -> HarmonicProfile {
        HarmonicProfile::new(ExteriorDomain::ball_complement(d, 1.0).unwrap())
    }

    #[test]
    fn half_line_closed_forms() {
        assert_relative_eq!(i_tau(&line(), 0.0).unwrap(), 0.5, max_relative = 1e-13);
        for tau in [0.5, 3.0, 10.0] {
            assert_relative_eq!(k_tau(&line(), tau).unwrap(), 2.0 * (-2.0 * tau).exp(), max_relative = 1e-11);
            assert_relative_eq!(kprime_over_k(&line(), tau).unwrap(), 2.0, max_relative = 1e-11);
        }
        assert_relative_eq!(k_of_t(&line(), 37.0).unwrap(), 1.0 / 37.0, max_relative = 1e-11);
        assert!(k_of_t(&line(), 0.4).is_err());
    }

    #[test]
    fn ball_values_match_high_precision_oracle() {
        // mpmath quadrature at 30 digits
        let cases = [
            (3, 0.0, 0.150_679_566_687_541_5),
            (3, 1.0, 0.535_131_929_788_563_7),
            (3, 5.0, 0.989_293_110_807_544_4),
            (2, 0.0, 0.179_137_596_576_160_67),
            (2, 5.0, 25.994_239_774_134_598),
        ];
        for (d, tau, expected) in cases {
            assert_relative_eq!(i_tau(&ball(d), tau).unwrap(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn full_space_normalisation_is_one() {
        for d in 1..5 {
            let p = HarmonicProfile::new(ExteriorDomain::full_space(d).unwrap());
            assert_relative_eq!(i_tau(&p, 1.0).unwrap(), 1.0, max_relative = 1e-13);
            assert_eq!(i_tau_prime(&p, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-4;
        for p in [line(), ball(2), ball(3), ball(4)] {
            for tau in [0.0, 0.7, 3.0] {
                let fd = if tau == 0.0 {
                    (-3.0 * i_tau(&p, 0.0).unwrap() + 4.0 * i_tau(&p, h).unwrap() - i_tau(&p, 2.0 * h).unwrap()) / (2.0 * h)
                } else {
                    (i_tau(&p, tau + h).unwrap() - i_tau(&p, tau - h).unwrap()) / (2.0 * h)
                };
                assert_relative_eq!(i_tau_prime(&p, tau).unwrap(), fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn table_rows_are_consistent() {
        let t = NormalizationTable::build(&ball(3), &[0.0, 1.0, 2.0]).unwrap();
        for r in &t.rows {
            assert!((r.k * r.i - 1.0).abs() <= 2.0 * f64::EPSILON);
            assert!(r.i > 0.0 && r.i <= 1.0);
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau,I,K,Iprime,err\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
