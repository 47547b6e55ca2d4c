//! Reader for the field snapshots written by [`RadialField::write_csv`].
//!
//! ```text
//! # t = 1.5
//! # d = 3
//! # domain = ball_complement d=3 R=1.0
//! r,u
//! 1.0,0.0
//! ...
//! ```

use crate::error::{Error, Result};
use crate::evolve::{trapezoid_weights, RadialField};
use crate::geometry::ExteriorDomain;

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Snapshot { line, message: msg.into() }
}

fn number(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| bad(line, format!("{what} '{}' is not a number", s.trim())))?;
    if !v.is_finite() {
        return Err(bad(line, format!("{what} must be finite")));
    }
    Ok(v)
}

/// Inverse of the `Display` form of [`ExteriorDomain`].
fn parse_domain(s: &str, line: usize) -> Result<ExteriorDomain> {
    let mut parts = s.split_whitespace();
    let kind = parts.next().ok_or_else(|| bad(line, "empty domain"))?;
    let mut dim = None;
    let mut radius = None;
    let mut x0 = None;
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| bad(line, format!("expected key=value, found '{p}'")))?;
        match k {
            "d" => dim = Some(v.parse::<usize>().map_err(|_| bad(line, format!("bad dimension '{v}'")))?),
            "R" => radius = Some(number(v, line, "radius")?),
            "x0" => x0 = Some(number(v, line, "x0")?),
            other => return Err(bad(line, format!("unknown domain parameter '{other}'"))),
        }
    }
    let domain = match kind {
        "half_line" => ExteriorDomain::half_line(x0.ok_or_else(|| bad(line, "half_line needs x0"))?),
        "ball_complement" => ExteriorDomain::ball_complement(
            dim.ok_or_else(|| bad(line, "ball_complement needs d"))?,
            radius.ok_or_else(|| bad(line, "ball_complement needs R"))?,
        ),
        "full_space" => ExteriorDomain::full_space(dim.ok_or_else(|| bad(line, "full_space needs d"))?),
        other => return Err(bad(line, format!("unknown domain kind '{other}'"))),
    };
    domain.map_err(|e| bad(line, e.to_string()))
}

/// Parses a snapshot. Weights are trapezoidal times the radial measure.
pub fn read_field_csv(text: &str) -> Result<RadialField> {
    let mut time = None;
    let mut dim = None;
    let mut domain = None;
    let mut header_seen = false;
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(meta) = content.strip_prefix('#') {
            if header_seen {
                return Err(bad(line, "metadata after the column header"));
            }
            let (k, v) = meta.split_once('=').ok_or_else(|| bad(line, "metadata must read '# key = value'"))?;
            match k.trim() {
                "t" => time = Some(number(v, line, "time")?),
                "d" => dim = Some((v.trim().parse::<usize>().map_err(|_| bad(line, "bad dimension"))?, line)),
                "domain" => domain = Some(parse_domain(v.trim(), line)?),
                other => return Err(bad(line, format!("unknown metadata key '{other}'"))),
            }
            continue;
        }
        if !header_seen {
            if content != "r,u" {
                return Err(bad(line, format!("expected header 'r,u', found '{content}'")));
            }
            header_seen = true;
            continue;
        }
        let (r, u) = content.split_once(',').ok_or_else(|| bad(line, "expected two columns"))?;
        if u.contains(',') {
            return Err(bad(line, "expected two columns"));
        }
        let r = number(r, line, "r")?;
        let u = number(u, line, "u")?;
        if let Some(&last) = nodes.last() {
            if !(r > last) {
                return Err(bad(line, "r must be strictly increasing"));
            }
        }
        nodes.push(r);
        values.push(u);
    }
    let end = text.lines().count().max(1);
    let time = time.ok_or_else(|| bad(end, "missing '# t = ...'"))?;
    if !(time >= 0.0) {
        return Err(bad(end, "time must be nonnegative"));
    }
    let domain = domain.ok_or_else(|| bad(end, "missing '# domain = ...'"))?;
    if let Some((d, line)) = dim {
        if d != domain.dim() {
            return Err(bad(line, format!("d = {d} disagrees with the domain dimension {}", domain.dim())));
        }
    }
    if nodes.len() < 2 {
        return Err(bad(end, "a snapshot needs at least two rows"));
    }
    let lo = domain.inner_coordinate();
    if nodes[0] < lo {
        return Err(bad(end, format!("first node {} lies inside the hole (boundary {lo})", nodes[0])));
    }
    let weights = trapezoid_weights(&nodes)
        .into_iter()
        .zip(&nodes)
        .map(|(w, &r)| w * domain.radial_measure(r))
        .collect();
    Ok(RadialField { domain, time, nodes, values, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_bitwise() {
        let domain = ExteriorDomain::ball_complement(3, 1.0).unwrap();
        let nodes: Vec<f64> = (0..50).map(|i| 1.0 + 0.1 * i as f64 + 1e-17 * i as f64).collect();
        let values: Vec<f64> = nodes.iter().map(|r| (-r * r / 3.0f64).exp() / 7.0).collect();
        let f = RadialField::from_samples(domain, 2.5, nodes, values).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = read_field_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn errors_name_the_line() {
        let text = "# t = 1\n# domain = half_line x0=0\nr,u\n0,0\n1,oops\n";
        match read_field_csv(text) {
            Err(Error::Snapshot { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_field_csv("# t = 1\n# domain = moon\nr,u\n").is_err());
        assert!(read_field_csv("# t = 1\n# domain = half_line x0=0\nr,u\n1,0\n0.5,0\n").is_err());
        assert!(read_field_csv("# t = 1\n# d = 2\n# domain = half_line x0=0\nr,u\n0,0\n1,0\n").is_err());
    }
}
