//! Solutions `u(t, .)` of the Dirichlet heat equation, their self-similar
//! rescaling and moments.
//!
//! Two solvers are provided. On the half-line the solution is the quadrature
//! of the datum against the image kernel. For radial problems in `d >= 2`
//! (ball complement or full space) a conservative finite-volume
//! Crank-Nicolson scheme is used; its face transmissibilities are built from
//! increments of `phi`, so `sum_i phi_i V_i u_i` is preserved exactly apart
//! from the flux through the artificial outer boundary.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unit_sphere_area, ExteriorDomain, HarmonicProfile};
use crate::kernels::{dipole, halfline_kernel_unchecked};
use crate::quad::{integrate_with_breaks, Tolerance, TAIL_SIGMAS};

/// Default tail level used to place the outer boundary.
pub const DEFAULT_EPS_TAIL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRule {
    Uniform,
    /// Spacing `h` within distance 1 of the inner boundary, `2h` beyond.
    Graded,
}

/// Nodes `r_min = r_0 < r_1 < ... < r_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialGrid {
    pub rule: GridRule,
    pub nodes: Vec<f64>,
}

const MIN_NODES: usize = 16;

impl RadialGrid {
    pub fn uniform(r_min: f64, r_max: f64, n: usize) -> Result<Self> {
        check_span(r_min, r_max)?;
        if n < MIN_NODES {
            return Err(Error::invalid(format!("grid needs at least {MIN_NODES} nodes (got {n})")));
        }
        let h = (r_max - r_min) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| r_min + h * i as f64).collect();
        nodes[n - 1] = r_max;
        Ok(Self { rule: GridRule::Uniform, nodes })
    }

    /// Spacing `h` on `[r_min, r_min + 1]` and about `2h` on the rest; the
    /// outer spacing is adjusted so that the last node is exactly `r_max`.
    pub fn graded(r_min: f64, r_max: f64, h: f64) -> Result<Self> {
        check_span(r_min, r_max)?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive (got {h})")));
        }
        let split = (r_min + 1.0).min(r_max);
        let fine = ((split - r_min) / h).ceil().max(1.0) as usize;
        let hf = (split - r_min) / fine as f64;
        let mut nodes: Vec<f64> = (0..=fine).map(|i| r_min + hf * i as f64).collect();
        nodes[fine] = split;
        if r_max > split {
            let coarse = ((r_max - split) / (2.0 * h)).ceil().max(1.0) as usize;
            let hc = (r_max - split) / coarse as f64;
            nodes.extend((1..=coarse).map(|i| split + hc * i as f64));
            *nodes.last_mut().unwrap() = r_max;
        }
        if nodes.len() < MIN_NODES {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_NODES} nodes (got {}); decrease h",
                nodes.len()
            )));
        }
        Ok(Self { rule: GridRule::Graded, nodes })
    }

    pub fn build(rule: GridRule, r_min: f64, r_max: f64, h: f64) -> Result<Self> {
        match rule {
            GridRule::Graded => Self::graded(r_min, r_max, h),
            GridRule::Uniform => {
                let n = ((r_max - r_min) / h).ceil() as usize + 1;
                Self::uniform(r_min, r_max, n.max(MIN_NODES))
            }
        }
    }

    pub fn r_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn r_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn check_span(r_min: f64, r_max: f64) -> Result<()> {
    if r_min.is_finite() && r_max.is_finite() && r_max > r_min {
        Ok(())
    } else {
        Err(Error::invalid(format!("need r_min < r_max (got {r_min}, {r_max})")))
    }
}

/// Nonnegative initial data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    /// `A exp(-(r - center)^2 / (2 width^2))` restricted to the domain and to
    /// `|r - center| <= 12 width`, with `A` chosen so the total mass is `mass`.
    GaussianShell { center: f64, width: f64, mass: f64 },
    /// `height` on `r1 <= r <= r2`.
    Annulus { r1: f64, r2: f64, height: f64 },
    /// Unit-mass narrow Gaussian of width `width` at `location`: a mollified point mass.
    PointApprox { location: f64, width: f64 },
    /// Half-line only: the data whose solution is `2 mass D(t, x - x0)` for all `t > 0`.
    Dipole { mass: f64 },
}

impl InitialDatum {
    pub fn name(&self) -> &'static str {
        match self {
            InitialDatum::GaussianShell { .. } => "gaussian_shell",
            InitialDatum::Annulus { .. } => "annulus",
            InitialDatum::PointApprox { .. } => "point_approx",
            InitialDatum::Dipole { .. } => "dipole",
        }
    }
}

/// An [`InitialDatum`] resolved against a domain: amplitude and support fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreparedDatum {
    pub datum: InitialDatum,
    pub domain: ExteriorDomain,
    amplitude: f64,
    lo: f64,
    hi: f64,
}

fn measure_weight(domain: &ExteriorDomain, r: f64) -> f64 {
    domain.radial_measure(r)
}

impl PreparedDatum {
    pub fn new(datum: InitialDatum, domain: ExteriorDomain) -> Result<Self> {
        let inner = domain.inner_coordinate();
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be finite")))
            }
        };
        let (lo, hi, center, width) = match datum {
            InitialDatum::GaussianShell { center, width, mass } => {
                finite(center, "center")?;
                if !(width > 0.0 && width.is_finite()) {
                    return Err(Error::invalid("gaussian_shell width must be positive"));
                }
                if !(mass > 0.0 && mass.is_finite()) {
                    return Err(Error::invalid("gaussian_shell mass must be positive"));
                }
                if center <= inner {
                    return Err(Error::invalid(format!(
                        "gaussian_shell center {center} is not inside the domain (boundary at {inner})"
                    )));
                }
                (center - TAIL_SIGMAS * width, center + TAIL_SIGMAS * width, center, width)
            }
            InitialDatum::PointApprox { location, width } => {
                finite(location, "location")?;
                if !(width > 0.0 && width.is_finite()) {
                    return Err(Error::invalid("point_approx width must be positive"));
                }
                if location <= inner {
                    return Err(Error::invalid(format!(
                        "point_approx location {location} is not inside the domain (boundary at {inner})"
                    )));
                }
                (location - TAIL_SIGMAS * width, location + TAIL_SIGMAS * width, location, width)
            }
            InitialDatum::Annulus { r1, r2, height } => {
                finite(r1, "r1")?;
                finite(r2, "r2")?;
                if !(r1 >= inner && r2 > r1) {
                    return Err(Error::invalid(format!(
                        "annulus needs boundary <= r1 < r2 (got r1 = {r1}, r2 = {r2}, boundary {inner})"
                    )));
                }
                if !(height > 0.0 && height.is_finite()) {
                    return Err(Error::invalid("annulus height must be positive"));
                }
                let prep = Self { datum, domain, amplitude: height, lo: r1, hi: r2 };
                return Ok(prep);
            }
            InitialDatum::Dipole { mass } => {
                if !matches!(domain, ExteriorDomain::HalfLine { .. }) {
                    return Err(Error::invalid("the dipole datum exists only on the half-line"));
                }
                if !(mass > 0.0 && mass.is_finite()) {
                    return Err(Error::invalid("dipole mass must be positive"));
                }
                return Ok(Self { datum, domain, amplitude: mass, lo: inner, hi: inner });
            }
        };
        let lo = lo.max(inner);
        let shape = |r: f64| (-0.5 * ((r - center) / width).powi(2)).exp();
        let breaks = gaussian_breaks(lo, hi, center, width);
        let total = integrate_with_breaks(
            |r| shape(r) * measure_weight(&domain, r),
            &breaks,
            Tolerance::relative(1e-13),
        )?;
        let mass = match datum {
            InitialDatum::GaussianShell { mass, .. } => mass,
            _ => 1.0,
        };
        Ok(Self { datum, domain, amplitude: mass / total.value, lo, hi })
    }

    /// Interval outside of which the datum is zero.
    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// `u0(r)`; zero outside the support.
    pub fn value(&self, r: f64) -> f64 {
        if r < self.lo || r > self.hi {
            return 0.0;
        }
        match self.datum {
            InitialDatum::GaussianShell { center, width, .. }
            | InitialDatum::PointApprox { location: center, width } => {
                self.amplitude * (-0.5 * ((r - center) / width).powi(2)).exp()
            }
            InitialDatum::Annulus { .. } => self.amplitude,
            InitialDatum::Dipole { .. } => 0.0,
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match self.datum {
            InitialDatum::GaussianShell { center, width, .. }
            | InitialDatum::PointApprox { location: center, width } => {
                gaussian_breaks(self.lo, self.hi, center, width)
            }
            _ => vec![self.lo, self.hi],
        }
    }

    /// `int phi u0` (the harmonic mass, conserved by the flow).
    pub fn harmonic_mass(&self, profile: &HarmonicProfile) -> Result<f64> {
        if let InitialDatum::Dipole { mass } = self.datum {
            return Ok(mass);
        }
        Ok(integrate_with_breaks(
            |r| profile.phi_extended(r) * self.value(r) * measure_weight(&self.domain, r),
            &self.breaks(),
            Tolerance::relative(1e-13),
        )?
        .value)
    }

    /// `int u0`.
    pub fn mass(&self) -> Result<f64> {
        if let InitialDatum::Dipole { .. } = self.datum {
            return Err(Error::invalid("the dipole datum has no finite initial mass"));
        }
        Ok(integrate_with_breaks(
            |r| self.value(r) * measure_weight(&self.domain, r),
            &self.breaks(),
            Tolerance::relative(1e-13),
        )?
        .value)
    }
}

fn gaussian_breaks(lo: f64, hi: f64, center: f64, width: f64) -> Vec<f64> {
    let mut b = vec![lo];
    for j in -6..=6 {
        let x = center + 2.0 * width * j as f64;
        if x > lo && x < hi {
            b.push(x);
        }
    }
    b.push(hi);
    b
}

/// A radial function sampled on nodes, together with quadrature weights
/// that integrate against Lebesgue measure on the domain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialField {
    pub domain: ExteriorDomain,
    pub time: f64,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentWeight {
    One,
    Phi,
}

impl RadialField {
    /// Field with trapezoidal weights (times the radial measure).
    pub fn from_samples(
        domain: ExteriorDomain,
        time: f64,
        nodes: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if nodes.len() != values.len() || nodes.len() < 2 {
            return Err(Error::invalid("field needs matching node and value arrays of length >= 2"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("field nodes must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field values must be finite"));
        }
        let weights = trapezoid_weights(&nodes)
            .into_iter()
            .zip(&nodes)
            .map(|(w, &r)| w * domain.radial_measure(r))
            .collect();
        Ok(Self { domain, time, nodes, values, weights })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// `int u w |x|^k`, with `w = 1` or `w = phi`.
    pub fn moment(&self, k: u32, weight: MomentWeight) -> f64 {
        let profile = HarmonicProfile::new(self.domain);
        self.nodes
            .iter()
            .zip(&self.values)
            .zip(&self.weights)
            .map(|((&r, &u), &w)| {
                let wt = match weight {
                    MomentWeight::One => 1.0,
                    MomentWeight::Phi => profile.phi_extended(r),
                };
                w * u * wt * r.abs().powi(k as i32)
            })
            .sum()
    }

    /// `m_{0,w} + m_{k,w}`.
    pub fn moment_plus_mass(&self, k: u32, weight: MomentWeight) -> f64 {
        self.moment(0, weight) + self.moment(k, weight)
    }

    pub fn mass(&self) -> f64 {
        self.moment(0, MomentWeight::One)
    }

    pub fn harmonic_mass(&self) -> f64 {
        self.moment(0, MomentWeight::Phi)
    }

    /// CSV snapshot: `#`-prefixed metadata, then `r,u` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# t = {:?}", self.time)?;
        writeln!(out, "# d = {}", self.dim())?;
        writeln!(out, "# domain = {}", self.domain)?;
        writeln!(out, "r,u")?;
        for (r, u) in self.nodes.iter().zip(&self.values) {
            writeln!(out, "{r:?},{u:?}")?;
        }
        Ok(())
    }
}

pub(crate) fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = nodes[i + 1] - nodes[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    debug_assert!(n % 2 == 1 && n >= 3);
    (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Options of the exact half-line solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactOptions {
    /// Odd number of uniform nodes per output time.
    pub nodes: usize,
    pub eps_tail: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self { nodes: 4001, eps_tail: DEFAULT_EPS_TAIL }
    }
}

/// Outer edge of the half-line grid at time `t`: the Gaussian tail of the
/// kernel started from the datum's support falls below `eps_tail` there.
fn halfline_extent(support_hi: f64, t: f64, eps_tail: f64) -> f64 {
    support_hi + (4.0 * t * (1.0 / eps_tail).ln()).sqrt()
}

fn check_times(times: &[f64], allow_zero: bool) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("at least one output time is required"));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::invalid("output times must be strictly increasing"));
        }
    }
    let first = times[0];
    if !(first.is_finite() && (first > 0.0 || (allow_zero && first == 0.0))) {
        return Err(Error::invalid(format!("output times must be positive (got {first})")));
    }
    if !times[times.len() - 1].is_finite() {
        return Err(Error::invalid("output times must be finite"));
    }
    Ok(())
}

/// `u(t, x) = int p(t, x, y) u0(y) dy` on the half-line `(x0, inf)`.
///
/// Each output time gets its own uniform grid on `[x0, x_max(t)]` with
/// Simpson weights. The dipole datum is evaluated in closed form.
pub fn solve_exact_halfline(
    datum: InitialDatum,
    x0: f64,
    times: &[f64],
    opts: ExactOptions,
) -> Result<Vec<RadialField>> {
    let domain = ExteriorDomain::half_line(x0)?;
    let prep = PreparedDatum::new(datum, domain)?;
    check_times(times, false)?;
    if opts.nodes < MIN_NODES || opts.nodes % 2 == 0 {
        return Err(Error::invalid(format!(
            "exact solver needs an odd node count >= {MIN_NODES} (got {})",
            opts.nodes
        )));
    }
    if !(opts.eps_tail > 0.0 && opts.eps_tail < 1.0) {
        return Err(Error::invalid("eps_tail must lie in (0, 1)"));
    }
    let breaks = prep.breaks();
    times
        .par_iter()
        .map(|&t| {
            let hi = prep.support().1.max(x0);
            let x_max = halfline_extent(hi, t, opts.eps_tail);
            let n = opts.nodes;
            let h = (x_max - x0) / (n - 1) as f64;
            let nodes: Vec<f64> = (0..n).map(|i| x0 + h * i as f64).collect();
            let values = nodes
                .iter()
                .map(|&x| match prep.datum {
                    InitialDatum::Dipole { mass } => Ok(2.0 * mass * dipole(t, x - x0)?),
                    _ => {
                        if x == x0 {
                            return Ok(0.0);
                        }
                        Ok(integrate_with_breaks(
                            |y| halfline_kernel_unchecked(t, x, y, x0) * prep.value(y),
                            &breaks,
                            Tolerance::new(0.0, 1e-12),
                        )?
                        .value)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RadialField {
                domain,
                time: t,
                nodes,
                values,
                weights: simpson_weights(n, h),
            })
        })
        .collect()
}

/// Options of the radial finite-volume solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdOptions {
    /// Base spacing `h` (the fine spacing of a graded grid).
    pub h: f64,
    /// Time step; defaults to `h`.
    pub dt: Option<f64>,
    pub rule: GridRule,
    pub eps_tail: f64,
    /// Outer radius; when absent it is placed from `eps_tail` and the final time.
    pub r_max: Option<f64>,
    /// Backward-Euler half steps taken before Crank-Nicolson (damps the
    /// high-frequency content of nonsmooth data).
    pub startup_half_steps: usize,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 0.02,
            dt: None,
            rule: GridRule::Graded,
            eps_tail: DEFAULT_EPS_TAIL,
            r_max: None,
            startup_half_steps: 4,
        }
    }
}

/// Outer radius `sqrt(2 t_final) sqrt(2 log(1/eps)) + support`.
pub fn default_r_max(support_hi: f64, t_final: f64, eps_tail: f64) -> f64 {
    support_hi + (2.0 * t_final).sqrt() * (2.0 * (1.0 / eps_tail).ln()).sqrt()
}


/// Conservative finite-volume Laplacian on a radial grid. Unknowns are the
/// nodes strictly inside the Dirichlet ends; without a hole, node 0 (the
/// origin) is an unknown with no inner face.
struct RadialOperator {
    /// Volume of every node's cell (both ends included).
    volume: Vec<f64>,
    /// `face[i]` couples nodes `i` and `i + 1`.
    face: Vec<f64>,
    first: usize,
    last: usize,
}

impl RadialOperator {
    fn new(domain: &ExteriorDomain, nodes: &[f64]) -> Self {
        let d = domain.dim();
        let omega = unit_sphere_area(d);
        let n = nodes.len();
        let profile = HarmonicProfile::new(*domain);
        let shell = |a: f64, b: f64| omega / d as f64 * (b.powi(d as i32) - a.powi(d as i32));
        let mid = |i: usize| 0.5 * (nodes[i] + nodes[i + 1]);
        let volume = (0..n)
            .map(|i| {
                let a = if i == 0 { nodes[0] } else { mid(i - 1) };
                let b = if i == n - 1 { nodes[n - 1] } else { mid(i) };
                shell(a, b)
            })
            .collect();
        let face = (0..n - 1)
            .map(|i| match domain {
                // Flux of phi through every sphere is the same constant, so the
                // exact transmissibility of a shell is that constant over the
                // increment of phi across it.
                ExteriorDomain::BallComplement { .. } => {
                    omega * profile.flux_constant() / profile.phi_increment(nodes[i], nodes[i + 1])
                }
                _ => omega * mid(i).powi(d as i32 - 1) / (nodes[i + 1] - nodes[i]),
            })
            .collect();
        let first = usize::from(domain.boundary().is_some());
        Self { volume, face, first, last: n - 2 }
    }

    fn unknowns(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    /// Diagonal and off-diagonal of the stiffness matrix restricted to the unknowns.
    fn stiffness(&self) -> (Vec<f64>, Vec<f64>) {
        let diag = self
            .unknowns()
            .map(|i| self.face[i] + if i > 0 { self.face[i - 1] } else { 0.0 })
            .collect();
        let off = (self.first..self.last).map(|i| -self.face[i]).collect();
        (diag, off)
    }
}

/// Solves a symmetric tridiagonal system in place (Thomas algorithm).
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let m = diag.len();
    scratch.clear();
    scratch.resize(m, 0.0);
    let mut denom = diag[0];
    rhs[0] /= denom;
    for i in 1..m {
        scratch[i] = off[i - 1] / denom;
        denom = diag[i] - off[i - 1] * scratch[i];
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / denom;
    }
    for i in (0..m - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
}

/// Radial solution of `u_t = u_rr + (d-1)/r u_r` with Dirichlet data on the
/// hole and at the outer radius, sampled at the requested times (`0` allowed).
///
/// Time stepping is Crank-Nicolson after `startup_half_steps` backward-Euler
/// half steps. The field weights are the finite-volume cell volumes.
pub fn solve_radial_fd(
    domain: ExteriorDomain,
    datum: InitialDatum,
    times: &[f64],
    opts: FdOptions,
) -> Result<Vec<RadialField>> {
    if let ExteriorDomain::HalfLine { .. } = domain {
        return Err(Error::invalid(
            "the radial solver handles ball complements and the full space; use the exact half-line solver",
        ));
    }
    check_times(times, true)?;
    let prep = PreparedDatum::new(datum, domain)?;
    let t_final = *times.last().unwrap();
    let hi = prep.support().1;
    let r_max = opts
        .r_max
        .unwrap_or_else(|| default_r_max(hi, t_final, opts.eps_tail));
    if r_max <= hi {
        return Err(Error::invalid(format!(
            "outer radius {r_max} does not clear the datum support (up to {hi})"
        )));
    }
    let grid = RadialGrid::build(opts.rule, domain.inner_coordinate(), r_max, opts.h)?;
    let dt = opts.dt.unwrap_or(opts.h);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("time step must be positive (got {dt})")));
    }
    let nodes = &grid.nodes;
    let op = RadialOperator::new(&domain, nodes);
    let (a_diag, a_off) = op.stiffness();
    let vol: Vec<f64> = op.unknowns().map(|i| op.volume[i]).collect();
    let m = vol.len();

    let mut u: Vec<f64> = op.unknowns().map(|i| prep.value(nodes[i])).collect();
    let field = |u: &[f64], t: f64| {
        let mut values = vec![0.0; nodes.len()];
        values[op.first..op.first + m].copy_from_slice(u);
        RadialField {
            domain,
            time: t,
            nodes: nodes.clone(),
            values,
            weights: op.volume.clone(),
        }
    };

    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut step = 0usize;
    let mut mass: f64 = u.iter().zip(&vol).map(|(a, b)| a * b).sum();
    let mut diag = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut scratch = Vec::with_capacity(m);
    for &target in times {
        while target - t > 1e-12 * target.max(1.0) {
            let startup = step < opts.startup_half_steps;
            let nominal = if startup { 0.5 * dt } else { dt };
            let k = nominal.min(target - t);
            // Implicit weight: 1 for backward Euler, 1/2 for Crank-Nicolson.
            let theta = if startup { 1.0 } else { 0.5 };
            for j in 0..m {
                diag[j] = vol[j] / k + theta * a_diag[j];
                let mut au = a_diag[j] * u[j];
                if j > 0 {
                    au += a_off[j - 1] * u[j - 1];
                }
                if j + 1 < m {
                    au += a_off[j] * u[j + 1];
                }
                rhs[j] = vol[j] / k * u[j] - (1.0 - theta) * au;
            }
            let off: Vec<f64> = a_off.iter().map(|o| theta * o).collect();
            solve_tridiagonal(&diag, &off, &mut rhs, &mut scratch);
            std::mem::swap(&mut u, &mut rhs);
            t += k;
            step += 1;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Unstable {
                    step,
                    time: t,
                    reason: "non-finite values".into(),
                });
            }
            let new_mass: f64 = u.iter().zip(&vol).map(|(a, b)| a * b).sum();
            if new_mass > mass * (1.0 + 1e-9) || new_mass < -1e-12 * mass.abs() {
                return Err(Error::Unstable {
                    step,
                    time: t,
                    reason: format!("mass moved from {mass:e} to {new_mass:e}"),
                });
            }
            mass = new_mass;
        }
        t = target;
        out.push(field(&u, target));
    }
    Ok(out)
}

/// Self-similar time `tau = log(2 (t - origin) + 1) / 2`.
///
/// With `origin = 0` this is the usual change of variables from data given
/// at `t = 0`; `origin = 1/2` matches `tau` to `k_t = K_tau` and makes the
/// half-line dipole `2 D(t, .)` a fixed point.
pub fn self_similar_time(t: f64, origin: f64) -> Result<f64> {
    let s = t - origin;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!(
            "time {t} precedes the self-similar origin {origin}"
        )));
    }
    Ok(0.5 * (2.0 * s).ln_1p())
}

/// `g(tau, y) = e^{d tau} phi(e^tau y) u(t, e^tau y) / m_phi` on `Omega_tau = e^{-tau} Omega`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RescaledField {
    pub tau: f64,
    pub t: f64,
    /// The rescaled domain `Omega_tau`.
    pub domain: ExteriorDomain,
    /// Profile of the original domain (evaluated at `e^tau y`).
    pub profile: HarmonicProfile,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RescaledField {
    pub fn mass(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(g, w)| g * w).sum()
    }
}

pub fn self_similar(field: &RadialField, m_phi: f64, origin: f64) -> Result<RescaledField> {
    if !(m_phi > 0.0 && m_phi.is_finite()) {
        return Err(Error::invalid(format!("harmonic mass must be positive (got {m_phi})")));
    }
    let tau = self_similar_time(field.time, origin)?;
    let d = field.dim() as i32;
    let s = tau.exp();
    let profile = HarmonicProfile::new(field.domain);
    let jac = s.powi(d);
    let nodes = field.nodes.iter().map(|r| r / s).collect();
    let values = field
        .nodes
        .iter()
        .zip(&field.values)
        .map(|(&r, &u)| jac * profile.phi_extended(r) * u / m_phi)
        .collect();
    let weights = field.weights.iter().map(|w| w / jac).collect();
    Ok(RescaledField {
        tau,
        t: field.time,
        domain: field.domain.scaled(1.0 / s),
        profile,
        nodes,
        values,
        weights,
    })
}

/// Whole-space radial solution in `d = 3` from a radial datum, by the
/// reflection formula `u = (1/r) int s u0(s) [Gamma_1(r - s) - Gamma_1(r + s)] ds`.
pub fn full_space_radial_d3(prep: &PreparedDatum, t: f64, r: f64) -> Result<f64> {
    let lo = prep.support().0.max(0.0);
    let kernel = |s: f64| {
        let g = |z: f64| (-z * z / (4.0 * t)).exp() / (4.0 * PI * t).sqrt();
        if r > 0.0 {
            s * prep.value(s) * (g(r - s) - g(r + s)) / r
        } else {
            s * prep.value(s) * 2.0 * s / (2.0 * t) * g(s)
        }
    };
    let mut breaks = prep.breaks();
    breaks.retain(|&b| b >= lo);
    if breaks.first() != Some(&lo) {
        breaks.insert(0, lo);
    }
    Ok(integrate_with_breaks(kernel, &breaks, Tolerance::new(1e-300, 1e-11))?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn graded_grid_doubles_density_near_hole() {
        let g = RadialGrid::graded(1.0, 11.0, 0.1).unwrap();
        assert_eq!(g.r_min(), 1.0);
        assert_eq!(g.r_max(), 11.0);
        assert_eq!(g.len(), 11 + 45);
        assert!((g.nodes[1] - g.nodes[0] - 0.1).abs() < 1e-12);
        assert!((g.nodes[55] - g.nodes[54] - 0.2).abs() < 1e-12);
        assert!(RadialGrid::uniform(0.0, 1.0, 15).is_err());
        assert!(RadialGrid::uniform(1.0, 1.0, 20).is_err());
    }

    #[test]
    fn datum_masses() {
        let ball = ExteriorDomain::ball_complement(3, 1.0).unwrap();
        let p = PreparedDatum::new(
            InitialDatum::GaussianShell { center: 3.0, width: 0.5, mass: 2.5 },
            ball,
        )
        .unwrap();
        assert_relative_eq!(p.mass().unwrap(), 2.5, max_relative = 1e-12);
        let line = ExteriorDomain::half_line(0.0).unwrap();
        let p = PreparedDatum::new(InitialDatum::PointApprox { location: 2.0, width: 1e-3 }, line).unwrap();
        assert_relative_eq!(p.mass().unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(p.harmonic_mass(&HarmonicProfile::new(line)).unwrap(), 2.0, max_relative = 1e-12);
        assert!(PreparedDatum::new(InitialDatum::PointApprox { location: 0.5, width: 0.1 }, ball).is_err());
        assert!(PreparedDatum::new(InitialDatum::Dipole { mass: 1.0 }, ball).is_err());
        assert!(PreparedDatum::new(InitialDatum::Annulus { r1: 2.0, r2: 1.5, height: 1.0 }, ball).is_err());
    }

    #[test]
    fn dipole_is_a_fixed_point() {
        let fields = solve_exact_halfline(
            InitialDatum::Dipole { mass: 1.0 },
            0.0,
            &[0.5, 2.0, 50.0],
            ExactOptions { nodes: 2001, ..Default::default() },
        )
        .unwrap();
        for f in &fields {
            assert_relative_eq!(f.harmonic_mass(), 1.0, max_relative = 1e-9);
            let g = self_similar(f, 1.0, 0.5).unwrap();
            for (&y, &v) in g.nodes.iter().zip(&g.values) {
                let target = (2.0 / PI).sqrt() * y * y * (-0.5 * y * y).exp();
                assert!((v - target).abs() < 1e-12, "y = {y}: {v} vs {target}");
            }
            assert_relative_eq!(g.mass(), 1.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn self_similar_time_values() {
        assert_relative_eq!(self_similar_time(0.5, 0.0).unwrap(), 0.5 * 2f64.ln());
        assert_eq!(self_similar_time(0.0, 0.0).unwrap(), 0.0);
        assert!(self_similar_time(0.2, 0.5).is_err());
    }

    #[test]
    fn tridiagonal_solver() {
        let diag = [4.0, 4.0, 4.0];
        let off = [1.0, 1.0];
        let mut rhs = [5.0, 6.0, 5.0];
        let mut s = Vec::new();
        solve_tridiagonal(&diag, &off, &mut rhs, &mut s);
        for v in rhs {
            assert_relative_eq!(v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn fd_conserves_harmonic_mass_structurally() {
        let ball = ExteriorDomain::ball_complement(3, 1.0).unwrap();
        let datum = InitialDatum::GaussianShell { center: 3.0, width: 0.5, mass: 1.0 };
        let fields = solve_radial_fd(
            ball,
            datum,
            &[0.0, 1.0, 5.0],
            FdOptions { h: 0.05, ..Default::default() },
        )
        .unwrap();
        let m0 = fields[0].harmonic_mass();
        for f in &fields {
            assert_relative_eq!(f.harmonic_mass(), m0, max_relative = 1e-12);
        }
        assert!(fields[2].mass() < fields[1].mass());
    }

    #[test]
    fn fd_rejects_half_line() {
        let line = ExteriorDomain::half_line(0.0).unwrap();
        assert!(solve_radial_fd(line, InitialDatum::Dipole { mass: 1.0 }, &[1.0], FdOptions::default()).is_err());
    }
}
