//! Batch front-end: `ehl <subcommand> --config <path> --out <dir> [--quiet]`.
//!
//! Exit status is 0 on success, 1 when a computation fails and 2 for
//! configuration or usage errors. Every run writes `manifest.json` listing
//! the files it produced with their SHA-256 digests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::parse_config;
use crate::error::{Error, Result};
use crate::verify::{run_experiment, Artifact, Report, Stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "EHL_THREADS";

pub const SUBCOMMANDS: [&str; 8] = ["profile", "normalize", "solve", "entropy", "lsi", "rates", "mass", "all"];

/// Stages run by a subcommand; `None` for an unknown name.
pub fn stages_for(subcommand: &str) -> Option<Vec<Stage>> {
    match subcommand {
        "all" => Some(Stage::ALL.to_vec()),
        // The rate bounds need lambda_hat.
        "rates" => Some(vec![Stage::Lsi, Stage::Rates]),
        "mass" => Some(vec![Stage::Lsi, Stage::Mass]),
        other => Stage::parse(other).map(|s| vec![s]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Seconds since the Unix epoch when the manifest was written.
    pub generated_at: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes the artifacts and `manifest.json` into `out`.
pub fn write_outputs(out: &Path, subcommand: &str, artifacts: &[Artifact]) -> Result<Manifest> {
    fs::create_dir_all(out)?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        fs::write(out.join(&a.name), &a.bytes)?;
        files.push(ManifestEntry { path: a.name.clone(), bytes: a.bytes.len(), sha256: sha256_hex(&a.bytes) });
    }
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        tool: "ehl".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand.to_string(),
        generated_at,
        files,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(out.join("manifest.json"), bytes)?;
    Ok(manifest)
}

/// Reads `EHL_THREADS` and sizes the global worker pool accordingly.
///
/// Returns the cap that was applied, if any. Must run before any parallel work.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer (got '{raw}')")))?;
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

/// Parsed command line.
#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub subcommand: String,
    pub config: PathBuf,
    pub out: PathBuf,
    pub quiet: bool,
}

fn summary(report: &Report, manifest: &Manifest, out: &Path) -> String {
    let mut s = String::new();
    s.push_str(&format!("{} [{}]\n", report.config.output.name, report.domain));
    for c in &report.pass {
        s.push_str(&format!("  {} {}: {}\n", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail));
    }
    for (k, f) in &report.exponents {
        s.push_str(&format!("  exponent {k}: {:.4} on [{:?}, {:?}]\n", f.alpha, f.t_lo, f.t_hi));
    }
    s.push_str(&format!("  wrote {} files to {}\n", manifest.files.len() + 1, out.display()));
    s
}

/// Runs one invocation and returns the process exit status. Diagnostics go
/// to stderr; the summary goes to stdout unless `quiet`.
pub fn dispatch(inv: &Invocation) -> i32 {
    let Some(stages) = stages_for(&inv.subcommand) else {
        eprintln!("error: unknown subcommand '{}'\n\n{}", inv.subcommand, usage());
        return EXIT_CONFIG;
    };
    let text = match fs::read_to_string(&inv.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", inv.config.display());
            return EXIT_CONFIG;
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", inv.config.display());
            return EXIT_CONFIG;
        }
    };
    let outcome = match run_experiment(&cfg, &stages) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return if e.is_config_error() { EXIT_CONFIG } else { EXIT_COMPUTATION };
        }
    };
    match write_outputs(&inv.out, &inv.subcommand, &outcome.artifacts) {
        Ok(manifest) => {
            if !inv.quiet {
                print!("{}", summary(&outcome.report, &manifest, &inv.out));
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: writing outputs to {}: {e}", inv.out.display());
            EXIT_COMPUTATION
        }
    }
}

pub fn usage() -> String {
    format!(
        "usage: ehl <subcommand> --config <path> --out <dir> [--quiet]\n\nsubcommands: {}\n\nenvironment: {THREADS_ENV}=<n> caps worker threads",
        SUBCOMMANDS.join(", ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subcommand_maps_to_stages() {
        for s in SUBCOMMANDS {
            assert!(stages_for(s).is_some(), "{s}");
        }
        assert!(stages_for("plot").is_none());
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
