//! Exterior domains with a centred hole and their harmonic profiles.
//!
//! The profile `phi` is the positive harmonic function vanishing on the hole
//! boundary, normalised by its growth at infinity:
//!
//! | domain                  | `phi(r)`              |
//! |-------------------------|-----------------------|
//! | half-line `(x0, inf)`   | `x - x0`              |
//! | ball complement, d = 2  | `log(r / R)`          |
//! | ball complement, d >= 3 | `1 - (r / R)^(2 - d)` |
//! | full space              | `1`                   |
//!
//! `integral(phi * u)` is conserved by the Dirichlet heat flow, which is why
//! the profile shows up as a weight almost everywhere else in the crate.

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    HalfLine,
    BallComplement,
    FullSpace,
}

impl DomainKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "half_line" => Some(DomainKind::HalfLine),
            "ball_complement" => Some(DomainKind::BallComplement),
            "full_space" => Some(DomainKind::FullSpace),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainKind::HalfLine => "half_line",
            DomainKind::BallComplement => "ball_complement",
            DomainKind::FullSpace => "full_space",
        }
    }
}

/// Half-line, complement of a centred ball, or the whole space.
///
/// Points are addressed by a single coordinate: `x` on the half-line, the
/// radius `|x|` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExteriorDomain {
    HalfLine { x0: f64 },
    BallComplement { dim: usize, radius: f64 },
    FullSpace { dim: usize },
}

/// Validating constructor. `radius` belongs to ball complements, `x0` to the
/// half-line; supplying a parameter the kind does not use is an error.
pub fn make_domain(
    kind: DomainKind,
    dim: usize,
    radius: Option<f64>,
    x0: Option<f64>,
) -> Result<ExteriorDomain> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    match kind {
        DomainKind::HalfLine => {
            if dim != 1 {
                return Err(Error::invalid(format!(
                    "half_line requires d = 1 (got d = {dim})"
                )));
            }
            if radius.is_some() {
                return Err(Error::invalid("half_line takes x0, not a hole radius"));
            }
            let x0 = x0.unwrap_or(0.0);
            if !x0.is_finite() {
                return Err(Error::invalid("x0 must be finite"));
            }
            Ok(ExteriorDomain::HalfLine { x0 })
        }
        DomainKind::BallComplement => {
            if dim < 2 {
                return Err(Error::invalid(
                    "ball_complement requires d >= 2 (the complement of an interval is disconnected)",
                ));
            }
            if x0.is_some() {
                return Err(Error::invalid("ball_complement takes a radius, not x0"));
            }
            let radius = radius.ok_or_else(|| Error::invalid("ball_complement needs a radius"))?;
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::invalid(format!(
                    "hole radius must be positive and finite (got {radius})"
                )));
            }
            Ok(ExteriorDomain::BallComplement { dim, radius })
        }
        DomainKind::FullSpace => {
            if radius.is_some() || x0.is_some() {
                return Err(Error::invalid("full_space takes no hole parameters"));
            }
            Ok(ExteriorDomain::FullSpace { dim })
        }
    }
}

impl ExteriorDomain {
    pub fn half_line(x0: f64) -> Result<Self> {
        make_domain(DomainKind::HalfLine, 1, None, Some(x0))
    }

    pub fn ball_complement(dim: usize, radius: f64) -> Result<Self> {
        make_domain(DomainKind::BallComplement, dim, Some(radius), None)
    }

    pub fn full_space(dim: usize) -> Result<Self> {
        make_domain(DomainKind::FullSpace, dim, None, None)
    }

    pub fn kind(&self) -> DomainKind {
        match self {
            ExteriorDomain::HalfLine { .. } => DomainKind::HalfLine,
            ExteriorDomain::BallComplement { .. } => DomainKind::BallComplement,
            ExteriorDomain::FullSpace { .. } => DomainKind::FullSpace,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ExteriorDomain::HalfLine { .. } => 1,
            ExteriorDomain::BallComplement { dim, .. } | ExteriorDomain::FullSpace { dim } => dim,
        }
    }

    /// Coordinate of the hole boundary; `None` for the full space.
    pub fn boundary(&self) -> Option<f64> {
        match *self {
            ExteriorDomain::HalfLine { x0 } => Some(x0),
            ExteriorDomain::BallComplement { radius, .. } => Some(radius),
            ExteriorDomain::FullSpace { .. } => None,
        }
    }

    /// Smallest admissible coordinate (the boundary, or the origin for the full space).
    pub fn inner_coordinate(&self) -> f64 {
        self.boundary().unwrap_or(0.0)
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.inner_coordinate()
    }

    /// Density of Lebesgue measure in the domain's coordinate: `1` on the
    /// half-line, `|S^{d-1}| r^{d-1}` for radial coordinates.
    pub fn radial_measure(&self, r: f64) -> f64 {
        match *self {
            ExteriorDomain::HalfLine { .. } => 1.0,
            ExteriorDomain::BallComplement { dim, .. } | ExteriorDomain::FullSpace { dim } => {
                unit_sphere_area(dim) * r.abs().powi(dim as i32 - 1)
            }
        }
    }

    /// The rescaled domain `e^{-tau} Omega`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            ExteriorDomain::HalfLine { x0 } => ExteriorDomain::HalfLine { x0: x0 * factor },
            ExteriorDomain::BallComplement { dim, radius } => ExteriorDomain::BallComplement {
                dim,
                radius: radius * factor,
            },
            full @ ExteriorDomain::FullSpace { .. } => full,
        }
    }
}

impl fmt::Display for ExteriorDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ExteriorDomain::HalfLine { x0 } => write!(f, "half_line x0={x0:?}"),
            ExteriorDomain::BallComplement { dim, radius } => {
                write!(f, "ball_complement d={dim} R={radius:?}")
            }
            ExteriorDomain::FullSpace { dim } => write!(f, "full_space d={dim}"),
        }
    }
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d` (`2` for `d = 1`).
pub fn unit_sphere_area(dim: usize) -> f64 {
    match dim {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        d => 2.0 * PI / (d as f64 - 2.0) * unit_sphere_area(d - 2),
    }
}

/// Harmonic profile of an [`ExteriorDomain`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HarmonicProfile {
    pub domain: ExteriorDomain,
}

impl HarmonicProfile {
    pub fn new(domain: ExteriorDomain) -> Self {
        Self { domain }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn check(&self, r: f64) -> Result<()> {
        if !r.is_finite() {
            return Err(Error::invalid(format!("coordinate must be finite (got {r})")));
        }
        match self.domain.boundary() {
            Some(b) if r < b => Err(Error::OutsideDomain { point: r, boundary: b }),
            _ if r < 0.0 && !matches!(self.domain, ExteriorDomain::HalfLine { .. }) => {
                Err(Error::invalid("radial coordinate must be nonnegative"))
            }
            _ => Ok(()),
        }
    }

    /// `phi(r)`; exactly zero on the boundary.
    pub fn phi(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        Ok(self.phi_extended(r))
    }

    /// The closed form of `phi` evaluated without the domain check. It is the
    /// analytic continuation into the hole and is negative there.
    pub fn phi_extended(&self, r: f64) -> f64 {
        match *self.domain_ref() {
            ExteriorDomain::HalfLine { x0 } => r - x0,
            ExteriorDomain::BallComplement { dim: 2, radius } => (r / radius).ln(),
            ExteriorDomain::BallComplement { dim, radius } => {
                1.0 - (r / radius).powi(2 - dim as i32)
            }
            ExteriorDomain::FullSpace { .. } => 1.0,
        }
    }

    fn domain_ref(&self) -> &ExteriorDomain {
        &self.domain
    }

    /// `phi(r2) - phi(r1)` without the cancellation of subtracting two values.
    pub fn phi_increment(&self, r1: f64, r2: f64) -> f64 {
        match self.domain {
            ExteriorDomain::HalfLine { .. } => r2 - r1,
            ExteriorDomain::BallComplement { dim: 2, .. } => ((r2 - r1) / r1).ln_1p(),
            ExteriorDomain::BallComplement { dim, radius } => {
                let p = 2 - dim as i32;
                (r1 / radius).powi(p) - (r2 / radius).powi(p)
            }
            ExteriorDomain::FullSpace { .. } => 0.0,
        }
    }

    /// Radial derivative `phi'(r)`.
    pub fn grad_phi_radial(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        Ok(self.grad_phi_extended(r))
    }

    pub fn grad_phi_extended(&self, r: f64) -> f64 {
        match self.domain {
            ExteriorDomain::HalfLine { .. } => 1.0,
            ExteriorDomain::BallComplement { dim: 2, .. } => 1.0 / r,
            ExteriorDomain::BallComplement { dim, radius } => {
                (dim as f64 - 2.0) * radius.powi(dim as i32 - 2) * r.powi(1 - dim as i32)
            }
            ExteriorDomain::FullSpace { .. } => 0.0,
        }
    }

    /// Second radial derivative `phi''(r)`.
    pub fn phi_second_derivative(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        Ok(match self.domain {
            ExteriorDomain::HalfLine { .. } | ExteriorDomain::FullSpace { .. } => 0.0,
            ExteriorDomain::BallComplement { dim: 2, .. } => -1.0 / (r * r),
            ExteriorDomain::BallComplement { dim, radius } => {
                let d = dim as f64;
                -(d - 1.0) * (d - 2.0) * radius.powi(dim as i32 - 2) * r.powi(-(dim as i32))
            }
        })
    }

    /// The constant `|phi'(r)| r^{d-1}` (radial flux of `phi` through spheres).
    pub fn flux_constant(&self) -> f64 {
        match self.domain {
            ExteriorDomain::HalfLine { .. } => 1.0,
            ExteriorDomain::BallComplement { dim: 2, .. } => 1.0,
            ExteriorDomain::BallComplement { dim, radius } => {
                (dim as f64 - 2.0) * radius.powi(dim as i32 - 2)
            }
            ExteriorDomain::FullSpace { .. } => 0.0,
        }
    }

    /// `C* = lim (1 - phi(x)) |x|^{d-2}`, which equals `R^{d-2}` for a ball of radius `R`.
    pub fn cstar(&self) -> Result<f64> {
        match self.domain {
            ExteriorDomain::BallComplement { dim, radius } if dim >= 3 => {
                Ok(radius.powi(dim as i32 - 2))
            }
            ExteriorDomain::FullSpace { dim } if dim >= 3 => Ok(0.0),
            _ => Err(Error::invalid("C* is defined only in dimension d >= 3")),
        }
    }
}

/// Largest centred-difference residual of `(r^{d-1} phi')'` over the interior
/// nodes of `grid`. For the closed-form profiles this is pure truncation error.
pub fn check_harmonicity(profile: &HarmonicProfile, grid: &[f64]) -> Result<f64> {
    if grid.len() < 3 {
        return Err(Error::invalid("harmonicity check needs at least three nodes"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid must be strictly increasing"));
    }
    let values = grid
        .iter()
        .map(|&r| profile.phi(r))
        .collect::<Result<Vec<_>>>()?;
    let p = profile.dim() as i32 - 1;
    let weight = |r: f64| match profile.domain {
        ExteriorDomain::HalfLine { .. } => 1.0,
        _ => r.powi(p),
    };
    let mut worst: f64 = 0.0;
    for i in 1..grid.len() - 1 {
        let (rm, r0, rp) = (grid[i - 1], grid[i], grid[i + 1]);
        let flux_right = weight(0.5 * (r0 + rp)) * (values[i + 1] - values[i]) / (rp - r0);
        let flux_left = weight(0.5 * (rm + r0)) * (values[i] - values[i - 1]) / (r0 - rm);
        let residual = (flux_right - flux_left) / (0.5 * (rp - rm));
        worst = worst.max(residual.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ball(d: usize, r: f64) -> HarmonicProfile {
        HarmonicProfile::new(ExteriorDomain::ball_complement(d, r).unwrap())
    }

    #[test]
    fn domain_validation() {
        assert!(make_domain(DomainKind::HalfLine, 1, None, Some(0.0)).is_ok());
        assert!(make_domain(DomainKind::BallComplement, 3, Some(1.0), None).is_ok());
        assert!(make_domain(DomainKind::BallComplement, 1, Some(1.0), None).is_err());
        assert!(make_domain(DomainKind::BallComplement, 3, Some(0.0), None).is_err());
        assert!(make_domain(DomainKind::BallComplement, 3, Some(-2.0), None).is_err());
        assert!(make_domain(DomainKind::BallComplement, 3, None, None).is_err());
        assert!(make_domain(DomainKind::BallComplement, 3, Some(1.0), Some(0.0)).is_err());
        assert!(make_domain(DomainKind::HalfLine, 2, None, Some(0.0)).is_err());
        assert!(make_domain(DomainKind::FullSpace, 2, Some(1.0), None).is_err());
        assert!(make_domain(DomainKind::FullSpace, 0, None, None).is_err());
    }

    #[test]
    fn phi_closed_forms() {
        assert_eq!(ball(3, 1.0).phi(2.0).unwrap(), 0.5);
        assert_eq!(ball(2, 1.0).phi(1.0).unwrap(), 0.0);
        let line = HarmonicProfile::new(ExteriorDomain::half_line(0.0).unwrap());
        assert_eq!(line.phi(3.5).unwrap(), 3.5);
        assert!(matches!(ball(3, 1.0).phi(0.5), Err(Error::OutsideDomain { .. })));
        let full = HarmonicProfile::new(ExteriorDomain::full_space(3).unwrap());
        assert_eq!(full.phi(0.0).unwrap(), 1.0);
    }

    #[test]
    fn gradient_closed_forms() {
        assert_relative_eq!(ball(2, 1.0).grad_phi_radial(4.0).unwrap(), 0.25);
        assert_relative_eq!(ball(3, 1.0).grad_phi_radial(2.0).unwrap(), 0.25);
        let line = HarmonicProfile::new(ExteriorDomain::half_line(-1.5).unwrap());
        assert_eq!(line.grad_phi_radial(7.0).unwrap(), 1.0);
        assert!(ball(2, 1.0).grad_phi_radial(0.9).is_err());
    }

    #[test]
    fn cstar_values() {
        assert_eq!(ball(3, 1.0).cstar().unwrap(), 1.0);
        assert_eq!(ball(4, 2.0).cstar().unwrap(), 4.0);
        assert_eq!(ball(5, 1.0).cstar().unwrap(), 1.0);
        assert!(ball(2, 1.0).cstar().is_err());
        let line = HarmonicProfile::new(ExteriorDomain::half_line(0.0).unwrap());
        assert!(line.cstar().is_err());
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(unit_sphere_area(3), 4.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(4), 2.0 * PI * PI, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(5), 8.0 * PI * PI / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn harmonicity_d3_below_threshold() {
        let grid: Vec<f64> = (0..=3900).map(|i| 1.1 + 1e-3 * i as f64).collect();
        let res = check_harmonicity(&ball(3, 1.0), &grid).unwrap();
        assert!(res <= 1e-6, "residual {res}");
    }

    #[test]
    fn harmonicity_d1_exact_on_dyadic_grid() {
        let line = HarmonicProfile::new(ExteriorDomain::half_line(0.0).unwrap());
        let h = 2f64.powi(-10);
        let grid: Vec<f64> = (0..2000).map(|i| i as f64 * h).collect();
        assert_eq!(check_harmonicity(&line, &grid).unwrap(), 0.0);
    }

    #[test]
    fn harmonicity_d2_second_order() {
        let p = ball(2, 1.0);
        let residual = |h: f64| {
            let n = (4.0 / h).round() as usize;
            let grid: Vec<f64> = (0..=n).map(|i| 1.1 + h * i as f64).collect();
            check_harmonicity(&p, &grid).unwrap()
        };
        let ratio = residual(0.02) / residual(0.01);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn phi_nonnegative_and_zero_on_boundary(d in 2usize..7, radius in 0.1f64..5.0, s in 0.0f64..50.0) {
            let p = ball(d, radius);
            prop_assert_eq!(p.phi(radius).unwrap(), 0.0);
            prop_assert!(p.phi(radius + s).unwrap() >= 0.0);
        }

        #[test]
        fn cstar_identity(d in 3usize..7, radius in 0.1f64..5.0, s in 0.0f64..20.0) {
            let p = ball(d, radius);
            let r = radius * (1.0 + s);
            let lhs = (1.0 - p.phi(r).unwrap()) * r.powi(d as i32 - 2);
            // 1 - phi is formed by subtraction, so its relative rounding error
            // grows like eps / (1 - phi).
            let psi = (r / radius).powi(2 - d as i32);
            prop_assert!((lhs / p.cstar().unwrap() - 1.0).abs() <= 4.0 * f64::EPSILON / psi);
        }

        #[test]
        fn log_growth_d2(radius in 0.1f64..5.0, s in 0.0f64..1e4) {
            let p = ball(2, radius);
            let r = radius + s;
            prop_assert!((p.phi(r).unwrap() - r.ln()).abs() <= radius.ln().abs() + 1e-12);
        }

        #[test]
        fn radial_flux_constant(d in 2usize..7, radius in 0.1f64..5.0, s in 0.0f64..50.0) {
            let p = ball(d, radius);
            let r = radius + s;
            let flux = p.grad_phi_radial(r).unwrap() * r.powi(d as i32 - 1);
            let expected = if d == 2 { 1.0 } else { (d as f64 - 2.0) * radius.powi(d as i32 - 2) };
            prop_assert!((flux / expected - 1.0).abs() < 1e-12);
            prop_assert!((p.flux_constant() / expected - 1.0).abs() < 1e-15);
        }

        #[test]
        fn increment_matches_difference(d in 2usize..6, radius in 0.5f64..3.0, s in 0.0f64..10.0, h in 1e-3f64..1.0) {
            let p = ball(d, radius);
            let r1 = radius + s;
            let r2 = r1 + h;
            let direct = p.phi(r2).unwrap() - p.phi(r1).unwrap();
            prop_assert!((p.phi_increment(r1, r2) - direct).abs() < 1e-12);
        }
    }
}
