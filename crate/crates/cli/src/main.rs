//! `promo`: scripted synthetic experiments for incentive-response models
//! and budgeted promotion allocation.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 infeasible
//! optimization, 4 data or model incompatibility.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use promo_core::experiment::ModelKind;

use config::{Overrides, RunConfig};

/// A usage or configuration problem (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "promo", version, about = "Incentive-response modelling and budgeted promotion allocation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory (overrides `paths.dir`).
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    /// Population preset: synthetic1 or synthetic2.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Run seed; resets every stage seed to its derived value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Dipn,
    Mlp,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Dipn => ModelKind::Dipn,
            KindArg::Mlp => ModelKind::Mlp,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the population and its train/validation/test splits.
    Gen {
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
    },
    /// Train a response model on the training split.
    Train {
        #[arg(long, value_enum)]
        model: Option<KindArg>,
    },
    /// Solve the budgeted allocation over the test users.
    Allocate {
        #[arg(long, value_enum)]
        model: Option<KindArg>,
        /// Average budget per user (single cost kind).
        #[arg(long, conflicts_with = "total")]
        per_capita: Option<f64>,
        /// Total budget (single cost kind).
        #[arg(long)]
        total: Option<f64>,
    },
    /// Score a model and its plan.
    Evaluate {
        #[arg(long, value_enum)]
        model: Option<KindArg>,
    },
    /// Incentive level for one user under a stored dual solution.
    Decide {
        #[arg(long, value_enum)]
        model: Option<KindArg>,
        /// Comma-separated feature values, e.g. `1,0,1`.
        #[arg(long)]
        features: String,
    },
    /// Side-by-side table of evaluated models.
    Compare {
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![KindArg::Dipn, KindArg::Mlp])]
        models: Vec<KindArg>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<promo_core::Error>() {
        return core_code(e);
    }
    4
}

fn core_code(e: &promo_core::Error) -> u8 {
    use promo_core::Error::*;
    match e {
        Infeasible { .. } | NoFeasiblePlan { .. } | BracketFailure(_) => 3,
        User { source, .. } => core_code(source),
        InvalidArgument(_) => 2,
        _ => 4,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides = Overrides {
        dir: cli.global.dir,
        preset: cli.global.preset,
        seed: cli.global.seed,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Train { model } | Command::Evaluate { model } | Command::Decide { model, .. } => {
            overrides.model = model.map(Into::into);
        }
        Command::Allocate {
            model,
            per_capita,
            total,
        } => {
            overrides.model = model.map(Into::into);
            overrides.per_capita = *per_capita;
            overrides.total = *total;
        }
        Command::Gen { .. } | Command::Compare { .. } => {}
    }
    let cfg = RunConfig::load(cli.global.config.as_deref(), &overrides)?;
    let json = cli.global.json;
    match cli.command {
        Command::Gen { force } => commands::gen(&cfg, force, json),
        Command::Train { .. } => commands::train(&cfg, json),
        Command::Allocate { .. } => commands::allocate(&cfg, json),
        Command::Evaluate { .. } => commands::evaluate(&cfg, json),
        Command::Decide { features, .. } => commands::decide(&cfg, &features, json),
        Command::Compare { models } => {
            let kinds: Vec<ModelKind> = models.into_iter().map(Into::into).collect();
            commands::compare(&cfg, &kinds, json)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
