use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod gaits;
mod output;

use config::{parse_range, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "snake-modes", version, about = "Natural-dynamics gaits of the elastic kinematic snake")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model parameter file (TOML); overrides the one named in the config.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "SNAKE_MODES_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the model invariants on seeded random states.
    Validate(ValidateArgs),
    /// Simulate the unactuated snake from one state.
    Simulate(SimulateArgs),
    /// Search for modes, gaits and periodic orbits.
    #[command(subcommand)]
    Find(FindCommand),
    /// Cost of transport of gaits and baseline loops.
    Eval(EvalArgs),
    /// Compare scaled gaits against the scaling laws.
    Scale(ScaleArgs),
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Initial state `a1,a2,da1,da2`.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true, required = true)]
    state: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Output spacing [s].
    #[arg(long, default_value_t = 0.01)]
    sample_dt: f64,
    /// Spring equilibria `a1,a2`, overriding the model.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    eq: Option<Vec<f64>>,
    /// Trajectory CSV; metadata goes to `<stem>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum FindCommand {
    /// Trace turning-point curves of the modes normal to the diagonal.
    NnmGenerators(ScanArgs),
    /// Intersect generators into switching gaits.
    NnmGaits(ScanArgs),
    /// Solve for non-brake periodic orbits.
    Nbo(NboArgs),
    /// Continue an orbit through energy.
    NboFamily(FamilyArgs),
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    /// Number of equilibria `(c, -c)`.
    #[arg(long)]
    samples: Option<usize>,
    /// Range of `c` as `a:b` [rad].
    #[arg(long, value_parser = parse_range)]
    range: Option<(f64, f64)>,
    /// Highest traced energy [J].
    #[arg(long)]
    e_max: Option<f64>,
    /// Gaits of one pair closer than this are merged [rad].
    #[arg(long)]
    dedup_tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SeedKind {
    /// The baseline ellipse, scaled.
    Ellipse,
    /// Symmetric orbits found on the diagonal at a fixed energy.
    Scan,
}

#[derive(Args, Debug)]
pub struct NboArgs {
    #[arg(long, value_enum, default_value_t = SeedKind::Ellipse)]
    seed: SeedKind,
    /// Equilibrium offset `c` of `(c, -c)`; defaults to the ellipse center.
    #[arg(long)]
    eq: Option<f64>,
    /// Velocity multiplier on the ellipse seed.
    #[arg(long, default_value_t = 1.0)]
    velocity_scale: f64,
    /// Period of the ellipse seed [s].
    #[arg(long, default_value_t = 2.0)]
    period: f64,
    /// Energy of the diagonal scan [J].
    #[arg(long, default_value_t = 32.0)]
    energy: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FamilyArgs {
    /// Seed orbit JSON.
    #[arg(long)]
    orbit: PathBuf,
    /// Energy step [J].
    #[arg(long, default_value_t = 0.05)]
    de: f64,
    /// Energy range `a:b`; defaults to the seed energy ± 2 J.
    #[arg(long, value_parser = parse_range)]
    range: Option<(f64, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Conservative,
    Friction,
    Both,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Gait or orbit files from `find`.
    #[arg(long = "gaits")]
    gaits: Vec<PathBuf>,
    /// Evaluate the baseline loop at these mean speeds [m/s].
    #[arg(long, value_delimiter = ',', num_args = 1)]
    baseline_speeds: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = LossArg::Both)]
    loss: LossArg,
    /// Evaluate at most this many gaits per file.
    #[arg(long)]
    limit: Option<usize>,
    /// Evaluation CSV.
    #[arg(long)]
    out: PathBuf,
    /// Directory for one trajectory CSV per gait.
    #[arg(long)]
    traj_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    /// Gait or orbit files from `find`.
    #[arg(long = "gaits")]
    gaits: Vec<PathBuf>,
    /// Check at most this many gaits per file.
    #[arg(long, default_value_t = 10)]
    limit: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("starting worker pool")?;
    }
    let params = cfg.model(cli.params.as_deref())?;
    match cli.command {
        Command::Validate(a) => commands::validate(&cfg, &params, &a),
        Command::Simulate(a) => commands::simulate(&cfg, &params, &a),
        Command::Find(FindCommand::NnmGenerators(a)) => commands::find_generators(&cfg, &params, &a),
        Command::Find(FindCommand::NnmGaits(a)) => commands::find_gaits(&cfg, &params, &a),
        Command::Find(FindCommand::Nbo(a)) => commands::find_nbo(&cfg, &params, &a),
        Command::Find(FindCommand::NboFamily(a)) => commands::find_family(&cfg, &params, &a),
        Command::Eval(a) => commands::eval(&cfg, &params, &a),
        Command::Scale(a) => commands::scale(&params, &a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
