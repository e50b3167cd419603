//! `hkflow`: HK distances, minimizing-movement runs and verification reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hkflow", version, about = "Hellinger-Kantorovich distances and gradient-flow schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Squared HK distance between two point clouds given as CSV (coordinates..., weight).
    HkDist(HkDistArgs),
    /// Run the minimizing-movement scheme described by a config file.
    JkoRun(RunArgs),
    /// Compare scheme runs with the finite-difference reference and the weak form.
    Verify(RunArgs),
    /// Check the superdifferential inequality on random instances.
    SubdiffCheck(RunArgs),
    /// Cone distance, geodesic samples and right derivatives between two cone points.
    Cone(ConeArgs),
}

#[derive(Args, Debug)]
pub struct HkDistArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps_end: f64,
    /// Write the result as JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the plan entries (i, j, mass) as CSV.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the `output` entry of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConeArgs {
    /// First point as `r,x1,...,xd`.
    #[arg(long, allow_hyphen_values = true)]
    pub p: String,
    /// Second point as `r,x1,...,xd`.
    #[arg(long, allow_hyphen_values = true)]
    pub q: String,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Number of geodesic samples on [0, 1].
    #[arg(long, default_value_t = 11)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("HKFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("HKFLOW_THREADS must be a positive integer, got '{raw}'"))?;
    if n == 0 {
        return Err("HKFLOW_THREADS must be at least 1".into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::HkDist(a) => commands::hk_dist(a),
        Command::JkoRun(a) => commands::jko_run(a),
        Command::Verify(a) => commands::verify(a),
        Command::SubdiffCheck(a) => commands::subdiff_check(a),
        Command::Cone(a) => commands::cone(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.solver { 2 } else { 1 })
        }
    }
}
