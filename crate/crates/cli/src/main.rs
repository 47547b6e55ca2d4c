//! `ehl`: command-line front-end of `ehl-core`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ehl_core::cli::{configure_threads, dispatch, Invocation, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "ehl", version, about = "Heat flow in exterior domains: batch experiments")]
#[command(after_help = "Set EHL_THREADS=<n> to cap the worker threads.")]
struct Args {
    /// One of: profile, normalize, solve, entropy, lsi, rates, mass, all
    subcommand: String,
    /// INI configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Suppress the summary on stdout
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let status = dispatch(&Invocation {
        subcommand: args.subcommand,
        config: args.config,
        out: args.out,
        quiet: args.quiet,
    });
    ExitCode::from(status as u8)
}
