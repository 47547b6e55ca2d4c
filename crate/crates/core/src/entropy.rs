//! Relative entropy of a rescaled solution with respect to the transient
//! equilibrium `F_tau = K_tau phi(e^tau y)^2 G(y)`, Fisher information, the
//! remainder `R(tau)` in two independent forms, and the entropy balance
//! `dH/dtau + Fisher + R = 0`.
//!
//! Grid functionals renormalise both `g` and the sampled `F_tau` to unit
//! discrete mass, so that Jensen and Csiszar-Kullback hold exactly on the
//! grid measure. Integrals of `F_tau` alone use adaptive quadrature.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolve::RescaledField;
use crate::geometry::HarmonicProfile;
use crate::kernels::ln_gaussian;
use crate::normalization::{i_tau, i_tau_prime, integrate_rescaled, NORMALIZATION_TOL};

/// Nodes with `g` below this value contribute nothing.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Allowed negative undershoot of `g` before it is treated as an error.
pub const NEGATIVE_SLACK: f64 = 1e-12;
/// Default step of the `tau` difference in [`remainder_r_direct`].
pub const DEFAULT_DELTA_TAU: f64 = 1e-4;

/// `F_tau` for a given profile and `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransientEquilibrium {
    pub profile: HarmonicProfile,
    pub tau: f64,
    pub k: f64,
}

impl TransientEquilibrium {
    pub fn new(profile: HarmonicProfile, tau: f64) -> Result<Self> {
        let k = 1.0 / i_tau(&profile, tau)?;
        Ok(Self { profile, tau, k })
    }

    /// `F_tau(y)`; error for `y` outside `Omega_tau`.
    pub fn value(&self, y: f64) -> Result<f64> {
        let s = self.tau.exp();
        self.profile.phi(s * y)?;
        Ok(self.value_unchecked(y))
    }

    pub fn value_unchecked(&self, y: f64) -> f64 {
        let p = self.profile.phi_extended(self.tau.exp() * y);
        self.k * p * p * ln_gaussian(self.profile.dim(), y).exp()
    }

    /// `log F_tau(y)` using `|phi|`, so it is also defined just inside the hole.
    pub fn ln_value(&self, y: f64) -> f64 {
        let p = self.profile.phi_extended(self.tau.exp() * y);
        self.k.ln() + 2.0 * p.abs().ln() + ln_gaussian(self.profile.dim(), y)
    }

    /// `int F_tau` by quadrature (1 up to quadrature error).
    pub fn mass(&self) -> Result<f64> {
        Ok(integrate_rescaled(&self.profile, self.tau, |y| self.value_unchecked(y), NORMALIZATION_TOL)?.value)
    }

    /// `s(y) = phi'(e^tau y) e^tau y / phi(e^tau y) = d/dtau log phi(e^tau y)`.
    pub fn log_phi_rate(&self, y: f64) -> f64 {
        let x = self.tau.exp() * y;
        let p = self.profile.phi_extended(x);
        if p == 0.0 {
            return 0.0;
        }
        self.profile.grad_phi_extended(x) * x / p
    }
}

/// `g` and `F_tau` on the grid of `g`, both renormalised to unit discrete mass.
struct GridPair<'a> {
    g: Vec<f64>,
    f: Vec<f64>,
    weights: &'a [f64],
}

fn grid_pair<'a>(g: &'a RescaledField, eq: &TransientEquilibrium) -> Result<GridPair<'a>> {
    if (g.tau - eq.tau).abs() > 1e-12 * (1.0 + eq.tau) {
        return Err(Error::invalid(format!(
            "field at tau = {} paired with equilibrium at tau = {}",
            g.tau, eq.tau
        )));
    }
    if let Some(v) = g.values.iter().find(|&&v| v < -NEGATIVE_SLACK) {
        return Err(Error::invalid(format!("density has a negative value {v:e}")));
    }
    let mass = g.mass();
    if !((mass - 1.0).abs() <= 1e-4) {
        return Err(Error::invalid(format!(
            "density mass {mass} differs from 1 by more than 1e-4"
        )));
    }
    let gv: Vec<f64> = g.values.iter().map(|&v| v.max(0.0) / mass).collect();
    let fv: Vec<f64> = g.nodes.iter().map(|&y| eq.value_unchecked(y).max(0.0)).collect();
    let fmass: f64 = fv.iter().zip(&g.weights).map(|(f, w)| f * w).sum();
    let fv = fv.into_iter().map(|f| f / fmass).collect();
    Ok(GridPair { g: gv, f: fv, weights: &g.weights })
}

fn clamped_ratio(g: f64, f: f64) -> f64 {
    (g / f).clamp(1e-300, 1e300)
}

/// `H(g | F_tau) = int g log(g / F_tau)` on the grid.
pub fn rel_entropy(g: &RescaledField, eq: &TransientEquilibrium) -> Result<f64> {
    let p = grid_pair(g, eq)?;
    Ok(entropy_of(&p))
}

fn entropy_of(p: &GridPair) -> f64 {
    p.g.iter()
        .zip(&p.f)
        .zip(p.weights)
        .filter(|((&g, &f), _)| g >= DENSITY_FLOOR && f > 0.0)
        .map(|((&g, &f), &w)| w * g * clamped_ratio(g, f).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `||g - F_tau||_1` on the grid.
pub fn l1_distance(g: &RescaledField, eq: &TransientEquilibrium) -> Result<f64> {
    let p = grid_pair(g, eq)?;
    Ok(l1_of(&p))
}

fn l1_of(p: &GridPair) -> f64 {
    p.g.iter().zip(&p.f).zip(p.weights).map(|((g, f), w)| w * (g - f).abs()).sum()
}

/// Three-point derivative on a nonuniform grid (second order at interior nodes).
fn derivative_at(y: &[f64], v: &[f64], valid: &[bool], i: usize) -> Option<f64> {
    let n = y.len();
    let left = i > 0 && valid[i - 1];
    let right = i + 1 < n && valid[i + 1];
    match (left, right) {
        (true, true) => {
            let hm = y[i] - y[i - 1];
            let hp = y[i + 1] - y[i];
            Some(
                (hm * hm * v[i + 1] - hp * hp * v[i - 1] + (hp * hp - hm * hm) * v[i])
                    / (hm * hp * (hm + hp)),
            )
        }
        (false, true) => Some((v[i + 1] - v[i]) / (y[i + 1] - y[i])),
        (true, false) => Some((v[i] - v[i - 1]) / (y[i] - y[i - 1])),
        (false, false) => None,
    }
}

/// `int g |d/dy log(g / F_tau)|^2`, differentiating the log-ratio on the grid.
pub fn fisher(g: &RescaledField, eq: &TransientEquilibrium) -> Result<f64> {
    let p = grid_pair(g, eq)?;
    Ok(fisher_of(&p, &g.nodes))
}

fn fisher_of(p: &GridPair, nodes: &[f64]) -> f64 {
    let valid: Vec<bool> = p.g.iter().zip(&p.f).map(|(&g, &f)| g >= DENSITY_FLOOR && f > 0.0).collect();
    let lr: Vec<f64> = p
        .g
        .iter()
        .zip(&p.f)
        .zip(&valid)
        .map(|((&g, &f), &ok)| if ok { clamped_ratio(g, f).ln() } else { 0.0 })
        .collect();
    (0..nodes.len())
        .filter(|&i| valid[i])
        .filter_map(|i| derivative_at(nodes, &lr, &valid, i).map(|dl| p.weights[i] * p.g[i] * dl * dl))
        .sum()
}

/// `R(tau) = 2 int s(y) (g - F_tau)` with `s = d/dtau log phi(e^tau y)`.
///
/// The `F_tau` part equals `K_tau I'_tau / 2` and is taken from quadrature.
pub fn remainder_r(g: &RescaledField, eq: &TransientEquilibrium) -> Result<f64> {
    let p = grid_pair(g, eq)?;
    let g_part: f64 = g
        .nodes
        .iter()
        .zip(&p.g)
        .zip(p.weights)
        .map(|((&y, &gv), &w)| w * gv * eq.log_phi_rate(y))
        .sum();
    let f_part = 0.5 * eq.k * i_tau_prime(&eq.profile, eq.tau)?;
    Ok(2.0 * (g_part - f_part))
}

/// `R(tau) = int g d/dtau log F_tau`, with the `tau` derivative taken by a
/// centred difference of step `delta`. `K` is recomputed by quadrature at
/// `tau +- delta` and `phi` is continued analytically into the hole.
pub fn remainder_r_direct(
    g: &RescaledField,
    profile: &HarmonicProfile,
    tau: f64,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("invalid tau step {delta}")));
    }
    let eq = TransientEquilibrium::new(*profile, tau)?;
    let p = grid_pair(g, &eq)?;
    let lo_tau = tau - delta;
    if lo_tau < 0.0 {
        return Err(Error::invalid(format!("tau - delta must be nonnegative (tau = {tau})")));
    }
    let plus = TransientEquilibrium::new(*profile, tau + delta)?;
    let minus = TransientEquilibrium::new(*profile, lo_tau)?;
    Ok(g.nodes
        .iter()
        .zip(&p.g)
        .zip(p.weights)
        .filter(|((_, &gv), _)| gv >= DENSITY_FLOOR)
        .map(|((&y, &gv), &w)| w * gv * (plus.ln_value(y) - minus.ln_value(y)) / (2.0 * delta))
        .sum())
}

/// `Q_g = int s(y)^2 (g + F_tau)`.
pub fn q_bound(g: &RescaledField, eq: &TransientEquilibrium) -> Result<f64> {
    let p = grid_pair(g, eq)?;
    let g_part: f64 = g
        .nodes
        .iter()
        .zip(&p.g)
        .zip(p.weights)
        .map(|((&y, &gv), &w)| w * gv * eq.log_phi_rate(y).powi(2))
        .sum();
    let f_part = integrate_rescaled(
        &eq.profile,
        eq.tau,
        |y| eq.log_phi_rate(y).powi(2) * eq.value_unchecked(y),
        NORMALIZATION_TOL,
    )?
    .value;
    Ok(g_part + f_part)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyRow {
    pub tau: f64,
    pub h: f64,
    pub fisher: f64,
    pub r: f64,
    pub r_direct: f64,
    pub q: f64,
    pub l1: f64,
    /// `2H - ||g - F||_1^2`.
    pub ck_gap: f64,
    /// `dH/dtau + Fisher + R`; absent at the ends of the trace.
    pub balance_residual: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EntropyTrace {
    pub rows: Vec<EntropyRow>,
}

impl EntropyTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tau,H,fisher,R,ck_gap,balance_residual")?;
        for r in &self.rows {
            let bal = r.balance_residual.map(|b| format!("{b:?}")).unwrap_or_default();
            writeln!(out, "{:?},{:?},{:?},{:?},{:?},{}", r.tau, r.h, r.fisher, r.r, r.ck_gap, bal)?;
        }
        Ok(())
    }

    /// Smallest `C` with `R^2 <= C H Q_g` on every row where `H Q_g > 0`.
    pub fn remainder_constant(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.h * r.q > 0.0)
            .map(|r| r.r * r.r / (r.h * r.q))
            .fold(0.0, f64::max)
    }
}

/// Entropy functionals at every field of a trajectory (increasing `tau`).
pub fn entropy_trace(fields: &[RescaledField], delta_tau: f64) -> Result<EntropyTrace> {
    use rayon::prelude::*;
    if fields.windows(2).any(|w| !(w[1].tau > w[0].tau)) {
        return Err(Error::invalid("trace fields must have increasing tau"));
    }
    let mut rows = fields
        .par_iter()
        .map(|g| {
            let eq = TransientEquilibrium::new(g.profile, g.tau)?;
            let p = grid_pair(g, &eq)?;
            let h = entropy_of(&p);
            let l1 = l1_of(&p);
            let fisher = fisher_of(&p, &g.nodes);
            let r = remainder_r(g, &eq)?;
            let step = delta_tau.min(g.tau);
            let r_direct = if step > 0.0 {
                remainder_r_direct(g, &g.profile, g.tau, step)?
            } else {
                // One-sided at tau = 0.
                let plus = TransientEquilibrium::new(g.profile, delta_tau)?;
                g.nodes
                    .iter()
                    .zip(&p.g)
                    .zip(p.weights)
                    .filter(|((_, &gv), _)| gv >= DENSITY_FLOOR)
                    .map(|((&y, &gv), &w)| w * gv * (plus.ln_value(y) - eq.ln_value(y)) / delta_tau)
                    .sum()
            };
            let q = q_bound(g, &eq)?;
            Ok(EntropyRow {
                tau: g.tau,
                h,
                fisher,
                r,
                r_direct,
                q,
                l1,
                ck_gap: 2.0 * h - l1 * l1,
                balance_residual: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let all = vec![true; rows.len()];
    for i in 1..rows.len().saturating_sub(1) {
        let dh = derivative_at(&taus, &hs, &all, i).expect("interior row has neighbours");
        rows[i].balance_residual = Some(dh + rows[i].fisher + rows[i].r);
    }
    Ok(EntropyTrace { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::trapezoid_weights;
    use crate::geometry::ExteriorDomain;
    use approx::assert_relative_eq;

    fn sampled(profile: HarmonicProfile, tau: f64, f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> RescaledField {
        let nodes: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let domain = profile.domain.scaled((-tau).exp());
        let weights = trapezoid_weights(&nodes)
            .into_iter()
            .zip(&nodes)
            .map(|(w, &y)| w * domain.radial_measure(y))
            .collect();
        let values = nodes.iter().map(|&y| f(y)).collect();
        RescaledField { tau, t: 0.0, domain, profile, nodes, values, weights }
    }

    #[test]
    fn equilibrium_has_unit_mass() {
        for p in [
            HarmonicProfile::new(ExteriorDomain::half_line(0.0).unwrap()),
            HarmonicProfile::new(ExteriorDomain::ball_complement(2, 1.0).unwrap()),
            HarmonicProfile::new(ExteriorDomain::ball_complement(3, 1.0).unwrap()),
        ] {
            for tau in [0.0, 2.0, 7.0] {
                let eq = TransientEquilibrium::new(p, tau).unwrap();
                assert_relative_eq!(eq.mass().unwrap(), 1.0, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn half_line_equilibrium_is_tau_independent() {
        let p = HarmonicProfile::new(ExteriorDomain::half_line(0.0).unwrap());
        for tau in [0.0, 1.0, 5.0] {
            let eq = TransientEquilibrium::new(p, tau).unwrap();
            for y in [0.3, 1.0, 2.5] {
                let f = (2.0 / std::f64::consts::PI).sqrt() * y * y * (-0.5 * y * y).exp();
                assert_relative_eq!(eq.value(y).unwrap(), f, max_relative = 1e-10);
            }
        }
        let eq = TransientEquilibrium::new(p, 1.0).unwrap();
        assert!(eq.value(-0.1).is_err());
    }

    #[test]
    fn identity_case_vanishes() {
        let p = HarmonicProfile::new(ExteriorDomain::ball_complement(3, 1.0).unwrap());
        let tau = 1.5;
        let eq = TransientEquilibrium::new(p, tau).unwrap();
        let a = (-tau).exp();
        let g = sampled(p, tau, |y| eq.value_unchecked(y), a, a + 12.0, 20001);
        let mut g = g;
        let m = g.mass();
        g.values.iter_mut().for_each(|v| *v /= m);
        assert!(rel_entropy(&g, &eq).unwrap() < 1e-14);
        assert!(fisher(&g, &eq).unwrap() < 1e-14);
        assert!(l1_distance(&g, &eq).unwrap() < 1e-14);
        assert!(remainder_r(&g, &eq).unwrap().abs() < 1e-6);
        assert!(remainder_r_direct(&g, &p, tau, 1e-4).unwrap().abs() < 1e-6);
    }

    #[test]
    fn gaussian_pair_closed_forms() {
        let p = HarmonicProfile::new(ExteriorDomain::full_space(1).unwrap());
        let eq = TransientEquilibrium::new(p, 0.0).unwrap();
        for s2 in [0.5f64, 1.7, 3.0] {
            let s = s2.sqrt();
            let g = sampled(p, 0.0, |y| (-0.5 * y * y / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt(), 0.0, 14.0 * s.max(1.0), 40001);
            let h = rel_entropy(&g, &eq).unwrap();
            assert_relative_eq!(h, 0.5 * (s2 - 1.0 - s2.ln()), max_relative = 1e-5);
            let fi = fisher(&g, &eq).unwrap();
            assert_relative_eq!(fi, (s2 - 1.0).powi(2) / s2, max_relative = 1e-5);
            assert!(2.0 * h <= fi);
        }
    }

    #[test]
    fn negative_density_is_rejected() {
        let p = HarmonicProfile::new(ExteriorDomain::full_space(1).unwrap());
        let eq = TransientEquilibrium::new(p, 0.0).unwrap();
        let mut g = sampled(p, 0.0, |y| (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt(), 0.0, 12.0, 2001);
        g.values[5] = -1e-6;
        assert!(rel_entropy(&g, &eq).is_err());
    }
}
