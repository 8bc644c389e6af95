//! `qss`: command-line runs of the V4+ spin model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// ODMR line map over a field grid (map.csv).
    Map,
    /// Clock points of one line inside a field window (clock.csv).
    Clock,
    /// Ensemble-averaged Rabi oscillation and its damped-cosine fit.
    Rabi,
    /// Ramsey fringes and their spectrum.
    Ramsey,
    /// Two-level Rabi chevron (chevron.csv).
    Chevron,
    /// Hyperfine fit to a peak list.
    Fit,
    /// Selection-rule table at one field (classify.csv).
    Classify,
}

#[derive(Debug, Parser)]
#[command(name = "qss", version, about = "Spin Hamiltonian spectra, dynamics and fits")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command, &cli.config, &cli.out, cli.seed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qss: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
