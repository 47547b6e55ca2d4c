//! Adaptive Gauss–Kronrod quadrature (7-point Gauss, 15-point Kronrod).
//!
//! Every integrand in this crate is either Gaussian-dominated or compactly
//! supported, so the routines here work on finite intervals only. Callers
//! truncate Gaussian tails with [`gaussian_tail_cutoff`].

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Number of standard deviations kept before a Gaussian tail is dropped.
pub const TAIL_SIGMAS: f64 = 12.0;

/// Upper limit of integration for an integrand decaying like `exp(-(r - center)^2 / (2 sd^2))`.
pub fn gaussian_tail_cutoff(center: f64, sd: f64) -> f64 {
    center + TAIL_SIGMAS * sd
}

// Kronrod abscissae on [0, 1]; odd indices are the Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Stopping rule: the estimated error must fall below `max(abs, rel * |value|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    /// Absolute 1e-10 and relative 1e-12.
    pub const fn standard() -> Self {
        Self::new(1e-10, 1e-12)
    }

    /// Purely relative; used for pointwise values that can be arbitrarily small.
    pub const fn relative(rel: f64) -> Self {
        Self::new(0.0, rel)
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::standard()
    }
}

/// Value of a definite integral together with its error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

impl std::ops::Add for Integral {
    type Output = Integral;
    fn add(self, rhs: Integral) -> Integral {
        Integral {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
            evaluations: self.evaluations + rhs.evaluations,
        }
    }
}

const MAX_SEGMENTS: usize = 4000;

#[derive(Clone, Copy, Debug)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One G7K15 panel on `[a, b]`, with the QUADPACK error heuristic.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = kronrod.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = kronrod * half;
    let res_abs = abs_sum * half.abs();
    let res_asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Segment { a, b, value, error }
}

/// Adaptive integral of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Integral> {
    integrate_with_breaks(f, &[a, b], tol)
}

/// Adaptive integral over `[breaks[0], breaks[last]]`, starting from the given panels.
///
/// Breakpoints let callers put panel edges on kinks, sign changes or the
/// boundary layer of a shrinking hole.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Integral> {
    if breaks.len() < 2 {
        return Err(Error::invalid("quadrature needs at least two breakpoints"));
    }
    if breaks.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("quadrature breakpoints must be finite"));
    }
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evals = 0;
    for w in breaks.windows(2) {
        if w[1] < w[0] {
            return Err(Error::invalid("quadrature breakpoints must be nondecreasing"));
        }
        if w[1] == w[0] {
            continue;
        }
        let seg = gk15(&f, w[0], w[1]);
        evals += 15;
        total += seg.value;
        total_err += seg.error;
        heap.push(seg);
    }
    if !total.is_finite() {
        return Err(Error::Quadrature {
            achieved: f64::NAN,
            requested: tol.target(0.0),
        });
    }
    while total_err > tol.target(total) {
        if heap.len() >= MAX_SEGMENTS {
            return Err(Error::Quadrature {
                achieved: total_err,
                requested: tol.target(total),
            });
        }
        let worst = heap.pop().expect("heap is nonempty while error is positive");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split further in floating point.
            return Err(Error::Quadrature {
                achieved: total_err,
                requested: tol.target(total),
            });
        }
        let left = gk15(&f, worst.a, mid);
        let right = gk15(&f, mid, worst.b);
        evals += 30;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if !total.is_finite() {
            return Err(Error::Quadrature {
                achieved: f64::NAN,
                requested: tol.target(0.0),
            });
        }
    }
    // Re-sum to shed accumulated cancellation from the running updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Ok(Integral {
        value,
        error,
        evaluations: evals,
    })
}

/// Breakpoints for a radial integral over `[a, upper]` whose integrand has a
/// boundary layer at a small positive `a`: geometric panels `a, 2a, 4a, ...`
/// up to 1, then unit-ish panels up to `upper`.
pub fn boundary_layer_breaks(a: f64, upper: f64) -> Vec<f64> {
    let mut breaks = vec![a];
    if a > 0.0 && a < 1.0 {
        let mut x = 2.0 * a;
        while x < 1.0 {
            breaks.push(x);
            x *= 2.0;
        }
    }
    let mut x = a.max(0.0).floor() + 1.0;
    while x < upper {
        if x > *breaks.last().unwrap() {
            breaks.push(x);
        }
        x += 1.0;
    }
    if upper > *breaks.last().unwrap() {
        breaks.push(upper);
    }
    breaks
}
