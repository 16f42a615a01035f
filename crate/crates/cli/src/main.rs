//! `semview`: generate synthetic worlds, score views, train the view
//! regressor, evaluate selectors and print pose grids.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "semview",
    version,
    about = "Semantic view scoring and selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path: a directory for `gen`, a file otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set world.n_categories=12`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic world: feature stores and a quality sidecar.
    Gen,
    /// Monte-Carlo score every view of the training categories.
    Score,
    /// Train the view score regressor.
    Train,
    /// Evaluate view selectors and write a report.
    Eval,
    /// Print the camera pose grid.
    Grid,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Score => "score",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Grid => "grid",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        threads: cli.threads,
        set: cli.set,
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(out) = cli.out {
        cfg.set_out(cli.command.name(), out);
    }
    cfg.validate(cli.command.name())?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Score => commands::score(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Grid => commands::grid(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
