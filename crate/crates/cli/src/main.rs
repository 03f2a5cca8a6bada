//! `frobkit`: verification reports, loop evolution data and flat coordinates.
//!
//! Exit status: 0 when every check passes, 1 when a check fails (or an
//! evolution loses validity), 2 on configuration or I/O errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use frobkit_core::checks::Suite;
use frobkit_core::hierarchy::FlowIndex;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "frobkit", version, about = "Numerical checks for a Frobenius manifold of meromorphic pairs and its hierarchy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Options shared by every subcommand; they override the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    s: Option<usize>,
    #[arg(long, global = true)]
    tail_depth: Option<usize>,
    /// Samples on the unit circle.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Nodes of the periodic x-grid.
    #[arg(long, global = true)]
    grid: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the verification battery and write report.json.
    Verify {
        /// Restrict to these suites (repeatable).
        #[arg(long = "suite")]
        suites: Vec<Suite>,
        /// Random points per check.
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        max_level: Option<usize>,
        /// Tolerance override `suite.check=value` (repeatable).
        #[arg(long = "tol", value_parser = parse_tol)]
        tolerances: Vec<(String, f64)>,
        /// Only print the summary line.
        #[arg(long)]
        quiet: bool,
    },
    /// Evolve a loop along one flow; writes timeseries.csv, snapshots.json and evolve.json.
    Evolve {
        /// Flow: s<k>, shat<k>, shat0 or <coord>:<level> (e.g. hhat_1:0, t_-1:0).
        #[arg(long, default_value = "shat0")]
        flow: FlowIndex,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Amplitude of the x-dependence of the initial loop.
        #[arg(long, default_value_t = 0.01)]
        amplitude: f64,
        /// Write a snapshot every this many steps (the last step is always written).
        #[arg(long, default_value_t = 10)]
        snapshot_every: usize,
    },
    /// Flat coordinates and their Gram matrix at a point; writes flat.json.
    Flat {
        /// Point JSON file; a seeded random point when omitted.
        #[arg(long)]
        point: Option<PathBuf>,
        /// Largest |i| among the t_i.
        #[arg(long, default_value_t = 3)]
        t_cap: i64,
    },
}

fn parse_tol(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let v: f64 = v.parse().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.to_string(), v))
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = common.$flag.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(seed => seed, out => out_dir, m => m, n => n, s => s, tail_depth => tail_depth, samples => n_samples, grid => grid_size);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Verify { suites, points, max_level, tolerances, quiet } => {
            if !suites.is_empty() {
                cfg.suites = suites;
            }
            if let Some(p) = points {
                cfg.points = p;
            }
            if let Some(l) = max_level {
                cfg.max_level = l;
            }
            cfg.tolerances.extend(tolerances);
            cfg.check()?;
            commands::verify(&cfg, quiet)
        }
        Command::Evolve { flow, dt, steps, amplitude, snapshot_every } => {
            cfg.check()?;
            commands::evolve(&cfg, &commands::EvolveArgs { flow, dt, steps, amplitude, snapshot_every })
        }
        Command::Flat { point, t_cap } => {
            cfg.check()?;
            commands::flat(&cfg, point.as_deref(), t_cap)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
