//! Log-Sobolev estimates for the transient equilibria.
//!
//! A radial `F_tau` on `R^d` is written as `F(x) = |x|^{1-d} f(|x|)` with
//! `f(r) = K_tau r^{d-1} phi(e^tau r)^2 G(r)` on `(R e^{-tau}, inf)`. The
//! potential `Phi = -log f` is convex with `Phi'' >= rho`, which gives the
//! Bakry-Emery bound `lambda_L(f) >= 2 rho`. The Poincare constant of `f` is
//! the spectral gap of `-(f u')' = lambda f u` with natural boundary
//! conditions, and the two are assembled into a bound for `F` through the
//! radial symmetrisation inequality with a configurable constant `c`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{unit_sphere_area, ExteriorDomain, HarmonicProfile};
use crate::kernels::ln_gaussian;
use crate::normalization::{i_tau, integrate_rescaled, NORMALIZATION_TOL};

/// Distance from the left endpoint where `Phi''` scans start.
pub const SCAN_OFFSET: f64 = 1e-3;
/// Length of the scanned interval beyond the left endpoint.
pub const SCAN_LENGTH: f64 = 12.0;
/// Cells used for the Poincare eigenproblem.
pub const DEFAULT_POINCARE_CELLS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityKind {
    /// `f = K r^{d-1} phi(e^tau r)^2 G(r)`; on the half-line `f = F_tau`.
    Transient { profile: HarmonicProfile, tau: f64, k: f64 },
    /// The standard Gaussian on the whole line.
    GaussianLine,
}

/// Positive density on an interval `(a, inf)` (or the whole line).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RadialDensity1D {
    pub kind: DensityKind,
    /// Left endpoint; `-inf` for the whole line.
    pub a: f64,
}

impl RadialDensity1D {
    /// The reduced density `f_tau` of `F_tau`.
    pub fn transient(profile: HarmonicProfile, tau: f64) -> Result<Self> {
        let k = 1.0 / i_tau(&profile, tau)?;
        let a = profile.domain.scaled((-tau).exp()).inner_coordinate();
        Ok(Self { kind: DensityKind::Transient { profile, tau, k }, a })
    }

    pub fn gaussian_line() -> Self {
        Self { kind: DensityKind::GaussianLine, a: f64::NEG_INFINITY }
    }

    fn radial_power(&self) -> i32 {
        match self.kind {
            DensityKind::Transient { profile, .. } => match profile.domain {
                ExteriorDomain::HalfLine { .. } => 0,
                _ => profile.dim() as i32 - 1,
            },
            DensityKind::GaussianLine => 0,
        }
    }

    /// `log f(r)`.
    pub fn ln_f(&self, r: f64) -> f64 {
        match self.kind {
            DensityKind::Transient { profile, tau, k } => {
                let p = profile.phi_extended(tau.exp() * r);
                let radial = if self.radial_power() == 0 { 0.0 } else { self.radial_power() as f64 * r.ln() };
                k.ln() + radial + 2.0 * p.abs().ln() + ln_gaussian(profile.dim(), r)
            }
            DensityKind::GaussianLine => ln_gaussian(1, r),
        }
    }

    pub fn f(&self, r: f64) -> f64 {
        if r <= self.a {
            return 0.0;
        }
        self.ln_f(r).exp()
    }

    /// Interval used for numerical work: `(a, a + 12]`, or `[-12, 12]` on the line.
    pub fn working_interval(&self) -> (f64, f64) {
        if self.a.is_finite() {
            let d = match self.kind {
                DensityKind::Transient { profile, .. } => profile.dim(),
                DensityKind::GaussianLine => 1,
            };
            (self.a, self.a.max(0.0) + SCAN_LENGTH + (d as f64).sqrt())
        } else {
            (-SCAN_LENGTH, SCAN_LENGTH)
        }
    }

    /// `m_k(f) = int r^k f(r) dr`.
    pub fn moment(&self, k: i32) -> Result<f64> {
        match self.kind {
            DensityKind::Transient { profile, tau, k: kk } => {
                let omega = match profile.domain {
                    ExteriorDomain::HalfLine { .. } => 1.0,
                    _ => unit_sphere_area(profile.dim()),
                };
                let s = tau.exp();
                let v = integrate_rescaled(
                    &profile,
                    tau,
                    |y| {
                        let p = profile.phi_extended(s * y);
                        y.abs().powi(k) * kk * p * p * ln_gaussian(profile.dim(), y).exp()
                    },
                    NORMALIZATION_TOL,
                )?;
                Ok(v.value / omega)
            }
            DensityKind::GaussianLine => match k {
                0 => Ok(1.0),
                1 => Ok((2.0 / std::f64::consts::PI).sqrt()),
                2 => Ok(1.0),
                _ => Err(Error::invalid("only moments 0..=2 of the line Gaussian are tabulated")),
            },
        }
    }
}

/// `Phi(r) = -log f(r)` (up to the additive normalisation).
pub fn potential_phi(density: &RadialDensity1D, r: f64) -> Result<f64> {
    if !(r > density.a) {
        return Err(Error::OutsideDomain { point: r, boundary: density.a });
    }
    Ok(-density.ln_f(r))
}

/// Closed-form `Phi''(r) = 1 + (d-1)/r^2 - 2 (phi_tau'' phi_tau - phi_tau'^2) / phi_tau^2`.
pub fn phi_dd_analytic(density: &RadialDensity1D, r: f64) -> Result<f64> {
    if !(r > density.a) {
        return Err(Error::OutsideDomain { point: r, boundary: density.a });
    }
    match density.kind {
        DensityKind::GaussianLine => Ok(1.0),
        DensityKind::Transient { profile, tau, .. } => {
            let s = tau.exp();
            let x = s * r;
            let p = profile.phi_extended(x);
            let p1 = s * profile.grad_phi_extended(x);
            let p2 = s * s * profile.phi_second_derivative(x)?;
            let radial = density.radial_power() as f64 / (r * r);
            Ok(1.0 + radial - 2.0 * (p2 * p - p1 * p1) / (p * p))
        }
    }
}

/// Five-point centred second difference of [`potential_phi`] with step `h`.
pub fn phi_dd_numeric(density: &RadialDensity1D, r: f64, h: f64) -> Result<f64> {
    let v = |k: f64| potential_phi(density, r + k * h);
    let (m2, m1, c, p1, p2) = (v(-2.0)?, v(-1.0)?, v(0.0)?, v(1.0)?, v(2.0)?);
    Ok((-(p2 + m2) + 16.0 * (p1 + m1) - 30.0 * c) / (12.0 * h * h))
}

/// Default scan grid: `n` points on `(a + 1e-3, a + 12]` (or `[-12, 12]` on the line).
pub fn scan_grid(density: &RadialDensity1D, n: usize) -> Vec<f64> {
    let (lo, hi) = if density.a.is_finite() {
        (density.a + SCAN_OFFSET, density.a + SCAN_LENGTH)
    } else {
        (-SCAN_LENGTH, SCAN_LENGTH)
    };
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Minimum of `Phi''` over the grid and its tail limit `1`.
pub fn phi_dd_min(density: &RadialDensity1D, grid: &[f64]) -> Result<f64> {
    grid.iter()
        .map(|&r| phi_dd_analytic(density, r))
        .try_fold(1.0f64, |m, v| Ok(m.min(v?)))
}

/// Largest relative gap between the closed-form `Phi''` and centred
/// differences over the grid. The step shrinks near the left endpoint.
/// Closed forms exist for every density here, so this is a consistency check
/// of the derivative formulas rather than a fallback.
pub fn phi_dd_crosscheck(density: &RadialDensity1D, grid: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &r in grid {
        let dist = if density.a.is_finite() { r - density.a } else { 1.0 };
        let h = 1e-2 * dist.min(1.0);
        let exact = phi_dd_analytic(density, r)?;
        let approx = phi_dd_numeric(density, r, h)?;
        worst = worst.max((approx - exact).abs() / exact.abs().max(1.0));
    }
    Ok(worst)
}

/// Bakry-Emery bound `lambda_L >= 2 min Phi''`, with a diagnostic when the
/// sampled potential is not convex (the bound is then 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BakryEmery {
    pub lambda: f64,
    pub phi_dd_min: f64,
    pub convex: bool,
}

pub fn bakry_emery_lambda(density: &RadialDensity1D) -> Result<BakryEmery> {
    let grid = scan_grid(density, 4000);
    let m = phi_dd_min(density, &grid)?;
    Ok(BakryEmery { lambda: 2.0 * m.max(0.0), phi_dd_min: m, convex: m >= 0.0 })
}

/// Number of eigenvalues of the symmetric tridiagonal `(diag, off)` below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON * (off[i - 1].abs() + 1.0) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `index`-th smallest eigenvalue (0-based) by bisection on Sturm counts.
pub fn tridiagonal_eigenvalue(diag: &[f64], off: &[f64], index: usize) -> Result<f64> {
    let n = diag.len();
    if index >= n || off.len() + 1 != n {
        return Err(Error::Eigen(format!("index {index} out of range for order {n}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let radius = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - radius);
        hi = hi.max(diag[i] + radius);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
            return Ok(0.5 * (lo + hi));
        }
    }
    if hi - lo <= 1e-10 * hi.abs().max(1.0) {
        Ok(0.5 * (lo + hi))
    } else {
        Err(Error::Eigen(format!("bisection stalled on [{lo}, {hi}]")))
    }
}

/// Poincare constant of `f`: the second-smallest eigenvalue of the
/// finite-volume discretisation of `-(f u')' = lambda f u` on `n` cells of
/// the working interval, with zero flux at both ends.
pub fn poincare_1d(density: &RadialDensity1D, n: usize) -> Result<f64> {
    if n < 16 {
        return Err(Error::invalid("Poincare discretisation needs at least 16 cells"));
    }
    let (lo, hi) = density.working_interval();
    let h = (hi - lo) / n as f64;
    let centre = |i: usize| lo + h * (i as f64 + 0.5);
    // Work with log f relative to its maximum to keep the entries representable.
    let ln_mass: Vec<f64> = (0..n).map(|i| density.ln_f(centre(i))).collect();
    let ln_face: Vec<f64> = (1..n).map(|i| density.ln_f(lo + h * i as f64)).collect();
    let shift = ln_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = ln_mass.iter().map(|l| (l - shift).exp() * h).collect();
    let cond: Vec<f64> = ln_face.iter().map(|l| (l - shift).exp() / h).collect();
    if mass.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Eigen("density underflows on the working interval; shorten it".into()));
    }
    // Symmetrise M^{-1/2} K M^{-1/2}.
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let k = if i > 0 { cond[i - 1] } else { 0.0 } + if i + 1 < n { cond[i] } else { 0.0 };
            k / mass[i]
        })
        .collect();
    let off: Vec<f64> = (0..n - 1).map(|i| -cond[i] / (mass[i] * mass[i + 1]).sqrt()).collect();
    tridiagonal_eigenvalue(&diag, &off, 1)
}

/// `c (1/lambda_L + m1 max{1/lambda_P, m2/(d-1)}^{1/2})^{-1}`.
pub fn radial_lsi_bound(
    lambda_l: f64,
    lambda_p: f64,
    m1: f64,
    m2: f64,
    d: usize,
    c_assembly: f64,
) -> Result<f64> {
    for (name, v) in [
        ("lambda_L", lambda_l),
        ("lambda_P", lambda_p),
        ("m1", m1),
        ("m2", m2),
        ("c", c_assembly),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive and finite (got {v})")));
        }
    }
    if d < 2 {
        return Err(Error::invalid("the radial assembly needs d >= 2"));
    }
    let inner = (1.0 / lambda_p).max(m2 / (d as f64 - 1.0)).sqrt();
    Ok(c_assembly / (1.0 / lambda_l + m1 * inner))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LsiRow {
    pub tau: f64,
    pub phidd_min: f64,
    pub be_lambda: f64,
    pub poincare: f64,
    pub assembled_bound: f64,
}

/// All ingredients of the log-Sobolev estimate of `F_tau`.
pub fn lsi_row(profile: &HarmonicProfile, tau: f64, c_assembly: f64) -> Result<LsiRow> {
    let density = RadialDensity1D::transient(*profile, tau)?;
    let be = bakry_emery_lambda(&density)?;
    let poincare = poincare_1d(&density, DEFAULT_POINCARE_CELLS)?;
    let assembled_bound = match profile.domain {
        ExteriorDomain::HalfLine { .. } => be.lambda,
        _ if profile.dim() == 1 => be.lambda,
        _ => radial_lsi_bound(
            be.lambda,
            poincare,
            density.moment(1)?,
            density.moment(2)?,
            profile.dim(),
            c_assembly,
        )?,
    };
    Ok(LsiRow { tau, phidd_min: be.phi_dd_min, be_lambda: be.lambda, poincare, assembled_bound })
}

/// Best available lower bound for the log-Sobolev constant of `F_tau`:
/// 2 on the half-line, the radial assembly otherwise.
pub fn lambda_hat(profile: &HarmonicProfile, tau: f64, c_assembly: f64) -> Result<f64> {
    if let ExteriorDomain::HalfLine { .. } = profile.domain {
        return Ok(2.0);
    }
    Ok(lsi_row(profile, tau, c_assembly)?.assembled_bound)
}

pub fn write_lsi_csv<W: Write>(rows: &[LsiRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "tau,phidd_min,be_lambda,poincare,assembled_bound")?;
    for r in rows {
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?}",
            r.tau, r.phidd_min, r.be_lambda, r.poincare, r.assembled_bound
        )?;
    }
    Ok(())
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
    fn half_line_potential() {
        let f = RadialDensity1D::transient(line(), 0.0).unwrap();
        assert_relative_eq!(phi_dd_analytic(&f, 1.0).unwrap(), 3.0, max_relative = 1e-14);
        for y in [0.1, 0.7, 2.0, 5.0] {
            assert_relative_eq!(phi_dd_analytic(&f, y).unwrap(), 1.0 + 2.0 / (y * y), max_relative = 1e-13);
        }
        assert_eq!(bakry_emery_lambda(&f).unwrap().lambda, 2.0);
        assert!(potential_phi(&f, 0.0).is_err());
    }

    #[test]
    fn d3_potential_closed_form() {
        for tau in [0.0, 1.0, 4.0] {
            let f = RadialDensity1D::transient(ball(3), tau).unwrap();
            let a = (-tau).exp();
            for r in [a + 0.01, a + 0.5, 3.0] {
                assert_relative_eq!(
                    phi_dd_analytic(&f, r).unwrap(),
                    1.0 + 2.0 / ((r - a) * (r - a)),
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn gaussian_line_constants() {
        let g = RadialDensity1D::gaussian_line();
        assert_eq!(bakry_emery_lambda(&g).unwrap().lambda, 2.0);
        let p = poincare_1d(&g, 2000).unwrap();
        assert!((p - 1.0).abs() < 0.02, "{p}");
    }

    #[test]
    fn assembly_arithmetic() {
        assert_relative_eq!(radial_lsi_bound(2.0, 1.0, 1.0, 1.0, 3, 1.0).unwrap(), 2.0 / 3.0, max_relative = 1e-15);
        assert!(radial_lsi_bound(3.0, 1.0, 1.0, 1.0, 3, 1.0).unwrap() > 2.0 / 3.0);
        assert!(radial_lsi_bound(0.0, 1.0, 1.0, 1.0, 3, 1.0).is_err());
        assert!(radial_lsi_bound(2.0, 1.0, 1.0, 1.0, 1, 1.0).is_err());
    }

    #[test]
    fn eigenvalue_bisection() {
        // Path-graph Laplacian on 4 nodes: eigenvalues 2 - 2 cos(k pi / 4).
        let diag = [1.0, 2.0, 2.0, 1.0];
        let off = [-1.0, -1.0, -1.0];
        for k in 0..4 {
            let e = tridiagonal_eigenvalue(&diag, &off, k).unwrap();
            let exact = 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / 4.0).cos();
            assert!((e - exact).abs() < 1e-12, "{k}: {e} vs {exact}");
        }
    }
}
