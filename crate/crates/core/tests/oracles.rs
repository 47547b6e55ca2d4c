//! Comparisons against independent oracles: closed forms, erf, reflection
//! formulas and plain composite quadrature written here.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use ehl_core::config::parse_config;
use ehl_core::evolve::{
    full_space_radial_d3, solve_exact_halfline, solve_radial_fd, ExactOptions, FdOptions, InitialDatum,
    PreparedDatum,
};
use ehl_core::geometry::{ExteriorDomain, HarmonicProfile};
use ehl_core::kernels::heat_gamma;
use ehl_core::snapshot::read_field_csv;
use ehl_core::verify::{error_norm, error_norms, kernel_error_1d, mass_constant, ErrorMode};

/// Composite Simpson on [a, b] with n (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn mass_constant_in_three_dimensions() {
    let p = HarmonicProfile::new(ExteriorDomain::ball_complement(3, 1.0).unwrap());
    // int_{R^3} G |y|^{-1} dy = 4 pi int r G(r) dr
    let oracle = 4.0 * PI * simpson(|r| r * (-r * r / 2.0).exp() * (2.0 * PI).powf(-1.5), 0.0, 40.0, 20_000);
    assert_relative_eq!(mass_constant(&p).unwrap(), oracle, max_relative = 1e-12);
    assert_relative_eq!(oracle, (2.0 / PI).sqrt(), max_relative = 1e-12);
    let p4 = HarmonicProfile::new(ExteriorDomain::ball_complement(4, 2.0).unwrap());
    // C* = R^2 = 4; int_{R^4} G |y|^{-2} = 2 pi^2 int r G(r) dr
    let oracle4 = 4.0 * 2.0 * PI * PI * simpson(|r| r * (-r * r / 2.0).exp() / (2.0 * PI).powi(2), 0.0, 40.0, 20_000);
    assert_relative_eq!(mass_constant(&p4).unwrap(), oracle4, max_relative = 1e-12);
}

#[test]
fn point_mass_total_mass_is_erf() {
    let times = [10.0, 100.0, 1000.0];
    let fields = solve_exact_halfline(
        InitialDatum::PointApprox { location: 2.0, width: 1e-4 },
        0.0,
        &times,
        ExactOptions::default(),
    )
    .unwrap();
    for f in &fields {
        let expected = libm::erf(2.0 / (2.0 * f.time.sqrt()));
        assert!((f.mass() - expected).abs() <= 1e-8, "t = {}: {} vs {expected}", f.time, f.mass());
    }
}

#[test]
fn error_norms_vanish_on_the_dipole() {
    let fields = solve_exact_halfline(InitialDatum::Dipole { mass: 1.5 }, 0.0, &[2.0, 50.0], ExactOptions::default())
        .unwrap();
    let p = HarmonicProfile::new(ExteriorDomain::half_line(0.0).unwrap());
    for f in &fields {
        for mode in ErrorMode::ALL {
            assert!(error_norm(f, &p, 1.5, mode).unwrap() <= 1e-14);
        }
    }
    let early = solve_exact_halfline(InitialDatum::Dipole { mass: 1.0 }, 0.0, &[1.0], ExactOptions::default()).unwrap();
    assert!(error_norms(&early[0], &p, 1.0).is_err());
}

#[test]
fn kernel_error_matches_taylor_remainder_at_large_t() {
    for (x, y) in [(0.5, 1.0), (1.0, 1.0), (2.0, 0.5)] {
        for t in [1e3, 1e4, 1e5] {
            let (err, cmp) = kernel_error_1d(t, x, y, 0.0).unwrap();
            // 1 - e^{-z} - z = -z^2/2 + O(z^3), z = xy/t
            let leading = heat_gamma(1, t, x - y).unwrap() * (x * y / t).powi(2) / 2.0;
            assert_relative_eq!(err, leading, max_relative = 2.0 * x * y / t);
            assert!(err * t * t < 1.0 && cmp > 0.0);
        }
    }
}

#[test]
fn kernel_error_vanishes_at_the_boundary() {
    let (err, cmp) = kernel_error_1d(4.0, 1.0, 1e-9, 0.0).unwrap();
    assert!(err < 1e-18 && cmp < 1e-8);
    assert!(kernel_error_1d(4.0, 1.0, 0.0, 0.0).is_err());
    assert!(kernel_error_1d(1.0, 1.0, 1.0, 0.0).is_err());
    assert!(kernel_error_1d(4.0, 3.0, 3.0, 0.0).is_err());
}

/// Largest `|u_fd - u_exact| / max u` at t = 1 and 5 on the whole grid.
fn full_space_error(h: f64) -> f64 {
    let domain = ExteriorDomain::full_space(3).unwrap();
    let datum = InitialDatum::GaussianShell { center: 3.0, width: 0.5, mass: 1.0 };
    let prep = PreparedDatum::new(datum, domain).unwrap();
    let fields = solve_radial_fd(domain, datum, &[1.0, 5.0], FdOptions { h, ..FdOptions::default() }).unwrap();
    let mut worst: f64 = 0.0;
    for f in &fields {
        let peak = f.values.iter().copied().fold(0.0, f64::max);
        for (&r, &u) in f.nodes.iter().zip(&f.values).filter(|(&r, _)| r <= 20.0) {
            let exact = full_space_radial_d3(&prep, f.time, r).unwrap();
            worst = worst.max((u - exact).abs() / peak);
        }
    }
    worst
}

#[test]
fn radial_solver_converges_to_reflection_formula_at_second_order() {
    let coarse = full_space_error(0.04);
    let fine = full_space_error(0.02);
    assert!(fine <= 1e-3, "relative error {fine:e}");
    assert!(coarse / fine > 3.0, "observed order ratio {}", coarse / fine);
}

#[test]
fn dirichlet_solution_lies_below_the_free_one() {
    let datum = InitialDatum::GaussianShell { center: 3.0, width: 0.5, mass: 1.0 };
    let ball = ExteriorDomain::ball_complement(3, 1.0).unwrap();
    let prep = PreparedDatum::new(datum, ExteriorDomain::full_space(3).unwrap()).unwrap();
    let fields = solve_radial_fd(ball, datum, &[0.5, 2.0, 10.0], FdOptions::default()).unwrap();
    for f in &fields {
        // Margin: discretisation error of the h = 0.02 grid.
        let margin = 1e-3 * f.values.iter().copied().fold(0.0, f64::max);
        let mut strictly_below = 0;
        for (&r, &u) in f.nodes.iter().zip(&f.values).step_by(7) {
            let free = full_space_radial_d3(&prep, f.time, r).unwrap();
            assert!(u >= -1e-12);
            assert!(u <= free + margin, "t = {} r = {r}: {u} > {free}", f.time);
            if r < 1.5 && u < 0.5 * free {
                strictly_below += 1;
            }
        }
        assert!(strictly_below > 0, "the hole should visibly absorb mass at t = {}", f.time);
    }
}

#[test]
fn snapshots_survive_a_file_round_trip() {
    let domain = ExteriorDomain::ball_complement(2, 1.0).unwrap();
    let datum = InitialDatum::Annulus { r1: 2.0, r2: 3.0, height: 1.0 };
    let fields = solve_radial_fd(domain, datum, &[0.0, 1.0], FdOptions { h: 0.05, ..FdOptions::default() }).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for (i, f) in fields.iter().enumerate() {
        let path = dir.join(format!("f{i}.csv"));
        f.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        let back = read_field_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.nodes, f.nodes);
        assert_eq!(back.values, f.values);
        assert_eq!(back.time, f.time);
        assert_eq!(back.domain, f.domain);
    }
}

#[test]
fn presets_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ini") {
            parse_config(&std::fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
