//! INI-style run configuration.
//!
//! ```text
//! # comment
//! [domain]
//! kind = ball_complement
//! d = 3
//! R = 1
//! ```
//!
//! Unknown sections and keys, malformed values, repeated keys and violated
//! invariants are all rejected with the offending line number.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolve::{GridRule, InitialDatum, DEFAULT_EPS_TAIL};
use crate::geometry::{make_domain, DomainKind, ExteriorDomain};

const SECTIONS: &[(&str, &[&str])] = &[
    ("domain", &["kind", "d", "R", "x0"]),
    ("initial", &["kind", "center", "width", "mass", "r1", "r2", "height", "location"]),
    (
        "time",
        &["t0", "t_final", "ratio", "solver", "nodes", "h", "dt", "grid", "r_max", "eps_tail", "origin"],
    ),
    ("normalize", &["taus"]),
    ("lsi", &["taus", "c_assembly"]),
    ("fit", &["window_lo", "window_hi", "split", "slack"]),
    ("output", &["name", "directory", "formats", "snapshots"]),
];

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section -> key -> entry` map with line bookkeeping.
#[derive(Debug, Default)]
struct RawConfig {
    sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)>,
    last_line: usize,
}

fn parse_raw(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::default();
    let mut current: Option<String> = None;
    for (idx, full) in text.lines().enumerate() {
        let line = idx + 1;
        raw.last_line = line;
        let content = match full.find('#') {
            Some(p) => &full[..p],
            None => full,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(line, "section header is missing ']'"))?
                .trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(Error::config(line, format!("unknown section [{name}]")));
            }
            raw.sections
                .entry(name.to_string())
                .or_insert_with(|| (line, BTreeMap::new()));
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("expected 'key = value', found '{content}'")))?;
        let key = key.trim();
        let value = value.trim();
        let section = current
            .as_ref()
            .ok_or_else(|| Error::config(line, format!("key '{key}' appears before any [section]")))?;
        let allowed = SECTIONS.iter().find(|(s, _)| s == section).unwrap().1;
        if !allowed.contains(&key) {
            return Err(Error::config(
                line,
                format!("unknown key '{key}' in [{section}] (expected one of: {})", allowed.join(", ")),
            ));
        }
        if value.is_empty() {
            return Err(Error::config(line, format!("key '{key}' has an empty value")));
        }
        let keys = &mut raw.sections.get_mut(section).unwrap().1;
        if let Some(prev) = keys.get(key) {
            return Err(Error::config(
                line,
                format!("duplicate key '{key}' in [{section}] (first set on line {})", prev.line),
            ));
        }
        keys.insert(key.to_string(), Entry { value: value.to_string(), line });
    }
    Ok(raw)
}

impl RawConfig {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|(_, k)| k.get(key))
    }

    fn section_line(&self, section: &str) -> usize {
        self.sections.get(section).map(|(l, _)| *l).unwrap_or(self.last_line.max(1))
    }

    fn f64(&self, section: &str, key: &str) -> Result<Option<(f64, usize)>> {
        self.get(section, key)
            .map(|e| parse_f64(&e.value, e.line, key).map(|v| (v, e.line)))
            .transpose()
    }

    fn usize(&self, section: &str, key: &str) -> Result<Option<(usize, usize)>> {
        self.get(section, key)
            .map(|e| {
                e.value
                    .parse::<usize>()
                    .map(|v| (v, e.line))
                    .map_err(|_| Error::config(e.line, format!("'{key}' expects a nonnegative integer, found '{}'", e.value)))
            })
            .transpose()
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<(Vec<f64>, usize)>> {
        self.get(section, key)
            .map(|e| parse_list(&e.value, e.line, key).map(|v| (v, e.line)))
            .transpose()
    }
}

fn parse_f64(s: &str, line: usize, key: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::config(line, format!("'{key}' expects a number, found '{s}'")))?;
    if !v.is_finite() {
        return Err(Error::config(line, format!("'{key}' must be finite")));
    }
    Ok(v)
}

/// Comma-separated numbers, or `start:stop:step` (inclusive of `stop`).
fn parse_list(s: &str, line: usize, key: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let values = if parts.len() == 3 {
        let a = parse_f64(parts[0], line, key)?;
        let b = parse_f64(parts[1], line, key)?;
        let h = parse_f64(parts[2], line, key)?;
        if !(h > 0.0) || b < a {
            return Err(Error::config(line, format!("'{key}' range needs start <= stop and a positive step")));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        if n > 100_000 {
            return Err(Error::config(line, format!("'{key}' range has too many points")));
        }
        (0..=n).map(|i| a + h * i as f64).collect()
    } else {
        s.split(',')
            .map(|p| parse_f64(p.trim(), line, key))
            .collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(Error::config(line, format!("'{key}' is empty")));
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config(line, format!("'{key}' must be strictly increasing")));
    }
    Ok(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Image-kernel quadrature (half-line only).
    Exact,
    /// Radial finite volumes (ball complement, full space).
    Fd,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeConfig {
    pub t0: f64,
    pub t_final: f64,
    pub ratio: f64,
    pub solver: SolverKind,
    pub nodes: usize,
    pub h: f64,
    pub dt: Option<f64>,
    pub grid: GridRule,
    pub r_max: Option<f64>,
    pub eps_tail: f64,
    pub origin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitConfig {
    pub window_lo: f64,
    pub window_hi: f64,
    /// Fraction of the window (in log t) used to fit constants.
    pub split: f64,
    /// Relative slack allowed when validating a fitted bound.
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LsiConfig {
    pub taus: Vec<f64>,
    pub c_assembly: f64,
}

/// Which solution snapshots the `solve` stage writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Snapshots {
    All,
    /// First and last output time only.
    Ends,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputConfig {
    pub name: String,
    pub directory: Option<String>,
    pub csv: bool,
    pub json: bool,
    pub snapshots: Snapshots,
}

/// Fully resolved configuration; every default is filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub domain: ExteriorDomain,
    pub initial: InitialDatum,
    pub time: TimeConfig,
    pub normalize_taus: Vec<f64>,
    pub lsi: LsiConfig,
    pub fit: FitConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Output times: `0` first for the finite-volume solver, then the
    /// geometric sequence `t0, t0 ratio, ...` closed by `t_final`.
    pub fn output_times(&self) -> Vec<f64> {
        let tc = &self.time;
        let mut times = Vec::new();
        if tc.solver == SolverKind::Fd {
            times.push(0.0);
        }
        let mut k = 0;
        loop {
            let t = tc.t0 * tc.ratio.powi(k);
            if t > tc.t_final * (1.0 - 1e-9) {
                break;
            }
            times.push(t);
            k += 1;
        }
        times.push(tc.t_final);
        times
    }
}

fn domain_defaults(domain: &ExteriorDomain) -> InitialDatum {
    match *domain {
        ExteriorDomain::HalfLine { x0 } => InitialDatum::PointApprox { location: x0 + 2.0, width: 1e-4 },
        ExteriorDomain::BallComplement { radius, .. } => {
            InitialDatum::GaussianShell { center: radius + 2.0, width: 0.5, mass: 1.0 }
        }
        ExteriorDomain::FullSpace { .. } => InitialDatum::GaussianShell { center: 3.0, width: 0.5, mass: 1.0 },
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw = parse_raw(text)?;

    // [domain]
    let kind_entry = raw
        .get("domain", "kind")
        .ok_or_else(|| Error::config(raw.section_line("domain"), "[domain] kind is required"))?;
    let kind = DomainKind::parse(&kind_entry.value).ok_or_else(|| {
        Error::config(
            kind_entry.line,
            format!("unknown domain kind '{}' (expected half_line, ball_complement or full_space)", kind_entry.value),
        )
    })?;
    let d = match raw.usize("domain", "d")? {
        Some((d, _)) => d,
        None if kind == DomainKind::HalfLine => 1,
        None => return Err(Error::config(kind_entry.line, format!("[domain] d is required for {}", kind.as_str()))),
    };
    let radius = raw.f64("domain", "R")?;
    let x0 = raw.f64("domain", "x0")?;
    let domain = make_domain(kind, d, radius.map(|r| r.0), x0.map(|x| x.0)).map_err(|e| {
        let line = raw.get("domain", "d").map(|e| e.line).unwrap_or(kind_entry.line);
        Error::config(line, strip_prefix(e))
    })?;

    // [initial]
    let initial = parse_initial(&raw, &domain)?;

    // [time]
    let solver_default = match domain {
        ExteriorDomain::HalfLine { .. } => SolverKind::Exact,
        _ => SolverKind::Fd,
    };
    let solver = match raw.get("time", "solver") {
        None => solver_default,
        Some(e) => match e.value.as_str() {
            "exact" => SolverKind::Exact,
            "fd" => SolverKind::Fd,
            "auto" => solver_default,
            other => return Err(Error::config(e.line, format!("unknown solver '{other}' (expected exact, fd or auto)"))),
        },
    };
    if solver != solver_default {
        let line = raw.get("time", "solver").map(|e| e.line).unwrap_or(1);
        return Err(Error::config(line, format!("solver {solver:?} does not apply to {}", domain.kind().as_str())));
    }
    let (t0_default, tf_default, ratio_default) = match solver {
        SolverKind::Exact => (10.0, 1e4, 10f64.powf(0.05)),
        SolverKind::Fd => (0.5, 200.0, 1.1),
    };
    let t0 = raw.f64("time", "t0")?;
    let t_final = raw.f64("time", "t_final")?;
    let ratio = raw.f64("time", "ratio")?;
    let tc = TimeConfig {
        t0: t0.map_or(t0_default, |v| v.0),
        t_final: t_final.map_or(tf_default, |v| v.0),
        ratio: ratio.map_or(ratio_default, |v| v.0),
        solver,
        nodes: raw.usize("time", "nodes")?.map_or(4001, |v| v.0),
        h: raw.f64("time", "h")?.map_or(0.02, |v| v.0),
        dt: raw.f64("time", "dt")?.map(|v| v.0),
        grid: match raw.get("time", "grid") {
            None => GridRule::Graded,
            Some(e) => match e.value.as_str() {
                "graded" => GridRule::Graded,
                "uniform" => GridRule::Uniform,
                other => return Err(Error::config(e.line, format!("unknown grid rule '{other}' (expected graded or uniform)"))),
            },
        },
        r_max: match raw.get("time", "r_max") {
            Some(e) if e.value == "auto" => None,
            _ => raw.f64("time", "r_max")?.map(|v| v.0),
        },
        eps_tail: raw.f64("time", "eps_tail")?.map_or(DEFAULT_EPS_TAIL, |v| v.0),
        origin: raw.f64("time", "origin")?.map_or(0.0, |v| v.0),
    };
    let tline = |key: &str| raw.get("time", key).map(|e| e.line).unwrap_or(raw.section_line("time"));
    if !(tc.t0 > 0.0) {
        return Err(Error::config(tline("t0"), "t0 must be positive"));
    }
    if !(tc.t_final > tc.t0) {
        return Err(Error::config(tline("t_final"), "t_final must exceed t0"));
    }
    if !(tc.ratio > 1.0) {
        return Err(Error::config(tline("ratio"), "ratio must exceed 1"));
    }
    if (tc.t_final / tc.t0).ln() / tc.ratio.ln() > 10_000.0 {
        return Err(Error::config(tline("ratio"), "more than 10000 output times requested"));
    }
    if tc.nodes < 16 || tc.nodes % 2 == 0 || tc.nodes > 2_000_001 {
        return Err(Error::config(tline("nodes"), "nodes must be odd and between 17 and 2000001"));
    }
    if !(tc.h > 0.0 && tc.h <= 1.0) {
        return Err(Error::config(tline("h"), "h must lie in (0, 1]"));
    }
    if let Some(dt) = tc.dt {
        if !(dt > 0.0) {
            return Err(Error::config(tline("dt"), "dt must be positive"));
        }
    }
    if !(tc.eps_tail > 0.0 && tc.eps_tail < 1.0) {
        return Err(Error::config(tline("eps_tail"), "eps_tail must lie in (0, 1)"));
    }
    if tc.origin < 0.0 || tc.origin > tc.t0 {
        return Err(Error::config(tline("origin"), "origin must lie in [0, t0]"));
    }
    if let Some(r) = tc.r_max {
        if r <= domain.inner_coordinate() {
            return Err(Error::config(tline("r_max"), "r_max must lie outside the hole"));
        }
    }
    if solver == SolverKind::Fd && tc.t_final / tc.h.min(tc.dt.unwrap_or(tc.h)) > 5e7 {
        return Err(Error::config(tline("t_final"), "too many time steps; raise h or dt"));
    }

    // [normalize], [lsi]
    let normalize_taus = raw
        .list("normalize", "taus")?
        .map_or_else(|| (0..=20).map(|i| 0.5 * i as f64).collect(), |v| v.0);
    if let Some((taus, line)) = raw.list("normalize", "taus")? {
        if taus[0] < 0.0 {
            return Err(Error::config(line, "taus must be nonnegative"));
        }
    }
    let lsi_taus = raw.list("lsi", "taus")?;
    if let Some((taus, line)) = &lsi_taus {
        if taus[0] < 0.0 {
            return Err(Error::config(*line, "taus must be nonnegative"));
        }
    }
    let c_assembly = raw.f64("lsi", "c_assembly")?;
    if let Some((c, line)) = c_assembly {
        if !(c > 0.0) {
            return Err(Error::config(line, "c_assembly must be positive"));
        }
    }
    let lsi = LsiConfig {
        taus: lsi_taus.map_or_else(|| (0..=10).map(|i| i as f64).collect(), |v| v.0),
        c_assembly: c_assembly.map_or(1.0, |v| v.0),
    };

    // [fit]
    let (mut lo_default, mut hi_default) = match solver {
        SolverKind::Exact => (100.0_f64.max(tc.t0), tc.t_final),
        SolverKind::Fd => (10.0_f64.max(tc.t0), tc.t_final / 10f64.sqrt()),
    };
    if !(hi_default > lo_default) {
        // Short runs: use everything from t = 2 (where error norms start).
        lo_default = tc.t0.max(2.0).min(tc.t_final);
        hi_default = tc.t_final;
    }
    let fit = FitConfig {
        window_lo: raw.f64("fit", "window_lo")?.map_or(lo_default, |v| v.0),
        window_hi: raw.f64("fit", "window_hi")?.map_or(hi_default, |v| v.0),
        split: raw.f64("fit", "split")?.map_or(0.5, |v| v.0),
        slack: raw.f64("fit", "slack")?.map_or(1e-6, |v| v.0),
    };
    let fline = |key: &str| raw.get("fit", key).map(|e| e.line).unwrap_or(raw.section_line("fit"));
    if !(fit.window_hi > fit.window_lo && fit.window_lo > 0.0) {
        return Err(Error::config(fline("window_hi"), "fit window must satisfy 0 < window_lo < window_hi"));
    }
    if !(fit.split > 0.0 && fit.split < 1.0) {
        return Err(Error::config(fline("split"), "split must lie in (0, 1)"));
    }
    if !(fit.slack >= 0.0) {
        return Err(Error::config(fline("slack"), "slack must be nonnegative"));
    }

    // [output]
    let name = raw.get("output", "name").map_or_else(|| "run".to_string(), |e| e.value.clone());
    if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        let line = raw.get("output", "name").unwrap().line;
        return Err(Error::config(line, "name may contain only letters, digits, '-' and '_'"));
    }
    let (mut csv, mut json) = (true, true);
    if let Some(e) = raw.get("output", "formats") {
        csv = false;
        json = false;
        for f in e.value.split(',').map(str::trim) {
            match f {
                "csv" => csv = true,
                "json" => json = true,
                other => return Err(Error::config(e.line, format!("unknown format '{other}' (expected csv, json)"))),
            }
        }
    }
    let snapshots = match raw.get("output", "snapshots") {
        None => Snapshots::All,
        Some(e) => match e.value.as_str() {
            "all" => Snapshots::All,
            "ends" => Snapshots::Ends,
            "none" => Snapshots::None,
            other => return Err(Error::config(e.line, format!("unknown snapshots policy '{other}' (expected all, ends or none)"))),
        },
    };
    let output = OutputConfig {
        name,
        directory: raw.get("output", "directory").map(|e| e.value.clone()),
        csv,
        json,
        snapshots,
    };

    Ok(RunConfig { domain, initial, time: tc, normalize_taus, lsi, fit, output })
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

fn parse_initial(raw: &RawConfig, domain: &ExteriorDomain) -> Result<InitialDatum> {
    let kind = raw.get("initial", "kind");
    let default = domain_defaults(domain);
    let name = kind.map_or(default.name(), |e| e.value.as_str());
    let allowed: &[&str] = match name {
        "gaussian_shell" => &["center", "width", "mass"],
        "annulus" => &["r1", "r2", "height"],
        "point_approx" => &["location", "width"],
        "dipole" => &["mass"],
        other => {
            return Err(Error::config(
                kind.unwrap().line,
                format!("unknown initial kind '{other}' (expected gaussian_shell, annulus, point_approx or dipole)"),
            ))
        }
    };
    if let Some((_, keys)) = raw.sections.get("initial") {
        for (k, e) in keys {
            if k != "kind" && !allowed.contains(&k.as_str()) {
                return Err(Error::config(e.line, format!("key '{k}' does not apply to initial kind {name}")));
            }
        }
    }
    let get = |key: &str, fallback: f64| -> Result<f64> { Ok(raw.f64("initial", key)?.map_or(fallback, |v| v.0)) };
    let inner = domain.inner_coordinate();
    let datum = match name {
        "gaussian_shell" => InitialDatum::GaussianShell {
            center: get("center", inner + 2.0)?,
            width: get("width", 0.5)?,
            mass: get("mass", 1.0)?,
        },
        "annulus" => InitialDatum::Annulus {
            r1: get("r1", inner + 1.0)?,
            r2: get("r2", inner + 2.0)?,
            height: get("height", 1.0)?,
        },
        "point_approx" => InitialDatum::PointApprox {
            location: get("location", inner + 2.0)?,
            width: get("width", 1e-4)?,
        },
        _ => InitialDatum::Dipole { mass: get("mass", 1.0)? },
    };
    crate::evolve::PreparedDatum::new(datum, *domain).map_err(|e| {
        let line = kind.map(|e| e.line).unwrap_or(raw.section_line("initial"));
        Error::config(line, strip_prefix(e))
    })?;
    Ok(datum)
}
