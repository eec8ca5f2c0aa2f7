//! `pikoop`: generate datasets, train, and analyse Koopman autoencoders.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pikoop::Error;

#[derive(Parser)]
#[command(name = "pikoop", version, about = "Physics-informed Koopman autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment preset (or dataset preset for `gen`).
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON config; its `preset` field names the base preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training regime: physics, data or hybrid.
    #[arg(long)]
    pub regime: Option<String>,
    /// Dotted override, e.g. `train.epochs=100` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Number of collocations (0 drops the set).
    #[arg(long)]
    pub colloc: Option<usize>,
    /// Number of trajectories (0 drops the set).
    #[arg(long)]
    pub snap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write PIKD datasets and a manifest.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for generation.
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write the held-out test sets.
        #[arg(long)]
        test: bool,
    },
    /// Train a model into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model initialization and shuffling seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory written by `gen` (otherwise datasets are generated).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from the state saved in `--out`.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Spectrum of L, matched against the exact eigenvalues.
    Eigs {
        #[arg(long, conflicts_with = "checkpoint")]
        run: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated exact eigenvalues (real).
        #[arg(long, allow_hyphen_values = true)]
        exact: Option<String>,
        /// Also report discrete-time eigenvalues for this step.
        #[arg(long)]
        discrete: Option<f64>,
        /// Eigenfunction grid resolution per axis (ODE) or decoder modes (PDE); 0 skips.
        #[arg(long, default_value_t = 0)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rollout error curves on the held-out test sets.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Only this test set.
        #[arg(long)]
        test: Option<String>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Forward prediction from one initial state.
    Predict {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated initial state.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "test")]
        x0: Option<String>,
        /// Start from a trajectory of this test set.
        #[arg(long)]
        test: Option<String>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect summary, spectrum and error curves of a run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric { .. }
        | Error::Divergence { .. }
        | Error::Convergence { .. }
        | Error::Singular(_)
        | Error::Positivity { .. } => 2,
        Error::Trajectory { source, .. } => exit_code(source),
        Error::Io { .. } | Error::Parse { .. } | Error::Version { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Gen { cfg, seed, out, jobs, test } => commands::gen(&cfg, seed, &out, jobs, test),
        Command::Train { cfg, seed, out, data, resume, jobs } => commands::train(&cfg, seed, &out, data.as_deref(), resume, jobs),
        Command::Eigs { run, checkpoint, exact, discrete, grid, out } => {
            commands::eigs(run.as_deref(), checkpoint.as_deref(), exact.as_deref(), discrete, grid, out.as_deref())
        }
        Command::Eval { run, data, test, metric, steps, dt, jobs } => {
            commands::eval(&run, data.as_deref(), test.as_deref(), metric.as_deref(), steps, dt, jobs)
        }
        Command::Predict { run, x0, test, index, dt, steps, out } => {
            commands::predict(&run, x0.as_deref(), test.as_deref(), index, dt, steps, out.as_deref())
        }
        Command::Report { run } => commands::report(&run),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
