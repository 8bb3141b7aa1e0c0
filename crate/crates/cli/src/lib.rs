//! Experiment harness: ingest → folds → train → evaluate → analyze → report.

mod commands;
mod config;
mod runs;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_analyze, cmd_evaluate, cmd_folds, cmd_ingest, cmd_report, cmd_train, IngestSummary, ReportSummary,
    TrainOptions, TrainSummary,
};
pub use config::{AnalysisConfig, ExperimentConfig, ModelSettings, HORIZON_PAIRS};
pub use runs::{Manifest, RunSpec, RunStatus};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] spatio::data::DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} run(s) already completed with this configuration (use --force to redo): {}", .0.len(), .0.join(", "))]
    AlreadyDone(Vec<String>),
    #[error("{} run(s) failed: {}", .0.len(), .0.iter().map(|(id, e)| format!("{id} ({e})")).collect::<Vec<_>>().join("; "))]
    RunsFailed(Vec<(String, String)>),
    #[error("{completed} completed run(s); missing: {}", .missing.join(", "))]
    MissingRuns { completed: usize, missing: Vec<String> },
    #[error(transparent)]
    Graph(#[from] spatio::graph::GraphError),
    #[error(transparent)]
    Model(#[from] spatio::model::ModelError),
    #[error(transparent)]
    Train(#[from] spatio::training::TrainError),
    #[error(transparent)]
    Eval(#[from] spatio::evaluation::EvalError),
    #[error(transparent)]
    Analysis(#[from] spatio::analysis::AnalysisError),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 when runs failed or are missing, 2 for configuration and data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::RunsFailed(_) | CliError::MissingRuns { .. } => 1,
            CliError::Train(_) | CliError::Model(_) | CliError::Eval(_) | CliError::Analysis(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spatio", version, about = "Spatiotemporal incidence forecasting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    pub config: PathBuf,
    /// Runs trained concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Redo runs that already completed with the same configuration.
    #[arg(long, global = true)]
    pub force: bool,
    /// Comma-separated seeds replacing the configured list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Load, impute and normalize the raw series.
    Ingest,
    /// Print and save the fold layout for every horizon.
    Folds,
    /// Train every configured run.
    Train,
    /// Re-score saved checkpoints on their test ranges.
    Evaluate,
    /// Connectivity, indicator tables and heatmaps from saved maps.
    Analyze,
    /// Metrics, significance tables and analysis artifacts.
    Report,
}

/// Parses `args`, runs the command and returns the process exit code.
/// `out_override` replaces the configured output directory.
pub fn run_cli<I, T>(args: I, out_override: Option<PathBuf>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli, out_override) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out_override: Option<PathBuf>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&cli.config, out_override)?;
    if let Some(seeds) = &cli.seed_list {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    match cli.command {
        Command::Ingest => {
            let s = cmd_ingest(&cfg)?;
            println!(
                "wrote {} ({} regions, {} days, {} channels); {} imputed cell(s), {} clamped",
                s.panel_path.display(),
                s.regions,
                s.days,
                s.channels,
                s.imputed_cells,
                s.clamped
            );
        }
        Command::Folds => print!("{}", cmd_folds(&cfg)?),
        Command::Train => {
            let s = cmd_train(
                &cfg,
                &TrainOptions {
                    jobs: cli.jobs,
                    force: cli.force,
                },
            )?;
            println!("{} run(s) completed; metrics in {}", s.completed.len(), s.metrics_path.display());
        }
        Command::Evaluate => {
            let p = cmd_evaluate(&cfg)?;
            println!("metrics in {}", p.display());
        }
        Command::Analyze => {
            let n = cmd_analyze(&cfg)?;
            println!("analyzed {n} run(s)");
        }
        Command::Report => {
            let s = cmd_report(&cfg)?;
            println!("report for {} run(s) in {}", s.runs, s.dir.display());
        }
    }
    Ok(())
}
