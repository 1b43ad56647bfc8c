//! Command-line front end: graph analysis sweeps, protocol simulations and
//! the analytic clustering checks. Every command writes CSV files and exits
//! with status 1 when a declared tolerance is violated.

mod analyze;
mod opts;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::opts::Checks;

#[derive(Parser, Debug)]
#[command(name = "vanetsci", version, about = "VANET graph analysis and broadcast simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Snapshot sweeps: degree, path length, clustering and connectivity.
    Analyze(AnalyzeArgs),
    /// Warning-dissemination simulation across densities and mechanisms.
    Simulate(SimulateArgs),
    /// Analytic clustering coefficients with Monte-Carlo cross-checks.
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Base seed; sweep point `i` of a preset uses seeds `seed..seed+seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key=value file; keys match the long flag names with `_` for `-`.
    /// Flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// urban-degree, urban-aspl, urban-clustering, urban-connectivity,
    /// highway-degree, highway-aspl, highway-clustering, highway-connectivity
    pub preset: String,
    #[command(flatten)]
    pub common: Common,
    /// Densities (veh/km² or veh/km): `10,60,80`, `10..100` (step = start)
    /// or `10..100:5`.
    #[arg(long)]
    pub densities: Option<String>,
    /// Alias for a single-density `--densities`.
    #[arg(long)]
    pub density: Option<String>,
    /// Urban areas in km², same list syntax.
    #[arg(long)]
    pub area: Option<String>,
    /// Highway lengths in km, same list syntax.
    #[arg(long, alias = "length")]
    pub lengths: Option<String>,
    /// Snapshots (seeds) per sweep point.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Urban placement: ca_warmed or uniform_on_streets.
    #[arg(long)]
    pub placement: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Preset name; only `uvcast` is defined.
    pub preset: String,
    #[command(flatten)]
    pub common: Common,
    /// Densities in veh/km², list syntax as for `analyze`.
    #[arg(long)]
    pub densities: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// baseline, p, s, ps or oracle; comma-separated. Defaults to all five.
    #[arg(long)]
    pub mechanism: Option<String>,
    /// Warm-up before the message is originated, seconds.
    #[arg(long)]
    pub warmup: Option<f64>,
    /// Collection window after origination, seconds.
    #[arg(long)]
    pub collect: Option<f64>,
    /// Side of the square region of interest, metres.
    #[arg(long)]
    pub roi: Option<f64>,
    /// Write one decision trace per run (`trace_<density>_<mechanism>_<run>.csv`).
    #[arg(long)]
    pub traces: bool,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Monte-Carlo pair samples per check (`1e6` accepted); 0 skips them.
    #[arg(long)]
    pub mc_samples: Option<String>,
}

fn run(cli: Cli) -> Result<Checks> {
    match cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Simulate(s) => simulate::run(s),
        Command::Oracle(o) => simulate::oracle(o),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(checks) => {
            checks.print();
            if checks.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
