use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use spatio::analysis::{
    avg_nonzero_weight, connectivity_votes, heatmap_export, indicator_table_csv, lockdown_indicator_table,
    read_lockdown_windows, read_snapshot_dir,
};
use spatio::data::{
    impute, load_panel, normalize_per_capita, read_normalized_panel, write_normalized_panel, ImputationEntry,
    RegionTable,
};
use spatio::evaluation::{summarize, t_test_table, t_test_table_csv, write_metrics_csv, write_summary_csv, Sided};
use spatio::graph::{geo_adjacency_from_table, mobility_indicator, SquareMatrix};

use crate::runs::{Manifest, Prepared, RunSpec, RunStatus, Workspace};
use crate::{CliError, ExperimentConfig};

fn create_dir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write(p: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(p, contents).map_err(|e| CliError::io(p, e))
}

fn region_table(cfg: &ExperimentConfig) -> Result<RegionTable, CliError> {
    if !cfg.region_table.exists() {
        return Err(CliError::Config(format!("{}: region table not found", cfg.region_table.display())));
    }
    Ok(RegionTable::from_csv(&cfg.region_table)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub panel_path: PathBuf,
    pub log_path: PathBuf,
    pub regions: usize,
    pub days: usize,
    pub channels: usize,
    pub imputed_cells: usize,
    pub clamped: usize,
}

#[derive(Serialize)]
struct ImputationReport<'a> {
    imputed_cells: usize,
    clamped_negative: usize,
    entries: &'a [ImputationEntry],
}

/// Loads every configured series, fills gaps, scales to per-10k rates and
/// writes `panel.csv` plus `imputation_log.json`.
pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<IngestSummary, CliError> {
    let table = region_table(cfg)?;
    let sources: Vec<_> = cfg.data.iter().map(|(c, p)| (*c, p.clone())).collect();
    let raw = load_panel(&sources, &table)?;
    let (filled, log) = impute(&raw)?;
    let panel = normalize_per_capita(&filled, &table)?;
    create_dir(&cfg.output_dir)?;
    let panel_path = cfg.panel_path();
    write_normalized_panel(&panel, &panel_path)?;
    let log_path = cfg.output_dir.join("imputation_log.json");
    let report = ImputationReport {
        imputed_cells: log.imputed_cells(),
        clamped_negative: log.mislabeled(),
        entries: &log.entries,
    };
    write(&log_path, serde_json::to_string_pretty(&report).expect("serializes") + "\n")?;
    Ok(IngestSummary {
        panel_path,
        log_path,
        regions: panel.regions.len(),
        days: panel.days(),
        channels: panel.channels.len(),
        imputed_cells: log.imputed_cells(),
        clamped: log.mislabeled(),
    })
}

fn workspace(cfg: &ExperimentConfig) -> Result<Workspace<'_>, CliError> {
    let path = cfg.panel_path();
    if !path.exists() {
        return Err(CliError::Config(format!("{}: panel not found; run `ingest` first", path.display())));
    }
    let panel = read_normalized_panel(&path)?;
    let table = region_table(cfg)?;
    if panel.regions != table.ids() {
        return Err(CliError::Config(format!(
            "{}: regions differ from {}; re-run `ingest`",
            path.display(),
            cfg.region_table.display()
        )));
    }
    let geo = geo_adjacency_from_table(&table, cfg.geo_kappa)?;
    Ok(Workspace {
        cfg,
        panel,
        geo,
        hash: cfg.hash(),
    })
}

/// Fold layout per horizon as CSV; also written to `folds.csv`.
pub fn cmd_folds(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let ws = workspace(cfg)?;
    let set = &cfg.channel_set_list()?[0];
    let mut s = String::from("horizon,fold,train_start,train_end,val_start,val_end,test_start,test_end,test_first_date,test_last_date\n");
    for &h in &cfg.horizons {
        let prep = ws.prepare(set, h)?;
        for f in &prep.folds {
            let first = prep.windows[f.test.start].start_date;
            let last = prep.windows[f.test.end - 1].start_date;
            let _ = writeln!(
                s,
                "{h},{},{},{},{},{},{},{},{first},{last}",
                f.id, f.train.start, f.train.end, f.val.start, f.val.end, f.test.start, f.test.end
            );
        }
    }
    create_dir(&cfg.output_dir)?;
    write(&cfg.output_dir.join("folds.csv"), &s)?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub jobs: usize,
    pub force: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { jobs: 1, force: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub completed: Vec<String>,
    pub metrics_path: PathBuf,
}

type PrepKey = (String, usize);

fn prepare_all(ws: &Workspace, specs: &[RunSpec]) -> Result<BTreeMap<PrepKey, Prepared>, CliError> {
    let mut preps = BTreeMap::new();
    for s in specs {
        let key = (s.channels.to_string(), s.horizon);
        if !preps.contains_key(&key) {
            preps.insert(key, ws.prepare(&s.channels, s.horizon)?);
        }
    }
    Ok(preps)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))
}

/// Trains every run of the grid, then writes `metrics.csv` over all
/// completed runs. A failing run is recorded and does not stop the others.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<TrainSummary, CliError> {
    let ws = workspace(cfg)?;
    let specs = ws.plan()?;
    let done: Vec<String> = specs
        .iter()
        .filter(|s| {
            Manifest::read(&ws.run_dir(s)).is_some_and(|m| m.status == RunStatus::Complete && m.config_hash == ws.hash)
        })
        .map(RunSpec::id)
        .collect();
    if !done.is_empty() && !opts.force {
        return Err(CliError::AlreadyDone(done));
    }
    let preps = prepare_all(&ws, &specs)?;
    create_dir(&cfg.runs_dir())?;
    let results: Vec<(String, Result<(), String>)> = pool(opts.jobs)?.install(|| {
        specs
            .par_iter()
            .map(|s| {
                let prep = &preps[&(s.channels.to_string(), s.horizon)];
                (s.id(), ws.execute(s, prep).map(|_| ()).map_err(|e| e.to_string()))
            })
            .collect()
    });
    let metrics_path = write_metrics(&ws, &specs)?;
    let failed: Vec<(String, String)> = results
        .iter()
        .filter_map(|(id, r)| r.as_ref().err().map(|e| (id.clone(), e.clone())))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::RunsFailed(failed));
    }
    Ok(TrainSummary {
        completed: results.into_iter().map(|(id, _)| id).collect(),
        metrics_path,
    })
}

fn write_metrics(ws: &Workspace, specs: &[RunSpec]) -> Result<PathBuf, CliError> {
    let records: Vec<_> = specs.iter().filter_map(|s| ws.record(s)).collect();
    let path = ws.cfg.output_dir.join("metrics.csv");
    write_metrics_csv(&records, &path)?;
    Ok(path)
}

fn completed_specs(ws: &Workspace) -> Result<Vec<RunSpec>, CliError> {
    let specs = ws.plan()?;
    let (done, missing): (Vec<RunSpec>, Vec<RunSpec>) = specs.into_iter().partition(|s| {
        Manifest::read(&ws.run_dir(s)).is_some_and(|m| m.status == RunStatus::Complete)
    });
    if done.is_empty() || !missing.is_empty() {
        return Err(CliError::MissingRuns {
            completed: done.len(),
            missing: missing.iter().map(RunSpec::id).collect(),
        });
    }
    Ok(done)
}

/// Re-scores every completed run from its checkpoint and rewrites `metrics.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let ws = workspace(cfg)?;
    let specs = completed_specs(&ws)?;
    let preps = prepare_all(&ws, &specs)?;
    for s in &specs {
        ws.rescore(s, &preps[&(s.channels.to_string(), s.horizon)])?;
    }
    write_metrics(&ws, &specs)
}

#[derive(Serialize)]
struct SnapshotSummary {
    snapshots: usize,
    mean_mobility_indicator: f64,
    avg_nonzero_weight: Option<f64>,
}

/// For every completed generated-graph run: connectivity votes, average
/// weights, lockdown indicator table and a heatmap of the mean map.
pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    let ws = workspace(cfg)?;
    let specs: Vec<RunSpec> = completed_specs(&ws)?.into_iter().filter(|s| s.variant.uses_adp()).collect();
    let windows = match &cfg.analysis.lockdowns {
        Some(p) => Some(read_lockdown_windows(p)?),
        None => None,
    };
    let labels = ws.panel.regions.clone();
    let root = cfg.output_dir.join("analysis");
    if root.exists() {
        fs::remove_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    }
    for s in &specs {
        let snaps = read_snapshot_dir(&ws.run_dir(s).join("snapshots"))?;
        if snaps.is_empty() {
            continue;
        }
        let dir = root.join(s.id());
        create_dir(&dir)?;
        let mats: Vec<SquareMatrix> = snaps.iter().map(|a| a.weights.clone()).collect();
        let votes = connectivity_votes(&mats, cfg.analysis.connectivity)?;
        let mut v = String::from("region,min_votes,max_votes\n");
        for (r, vote) in labels.iter().zip(&votes) {
            let _ = writeln!(v, "{r},{},{}", vote.min_votes, vote.max_votes);
        }
        write(&dir.join("connectivity_votes.csv"), v)?;
        let summary = SnapshotSummary {
            snapshots: mats.len(),
            mean_mobility_indicator: mats.iter().map(mobility_indicator).sum::<f64>() / mats.len() as f64,
            avg_nonzero_weight: avg_nonzero_weight(&mats).ok(),
        };
        write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializes") + "\n")?;
        if let Some(w) = &windows {
            let rows = lockdown_indicator_table(&snaps, w, &cfg.analysis.lockdown)?;
            write(&dir.join("indicator_table.csv"), indicator_table_csv(&rows))?;
        }
        let n = mats[0].n();
        let mean = SquareMatrix::from_fn(n, |i, j| mats.iter().map(|m| m.get(i, j)).sum::<f64>() / mats.len() as f64);
        heatmap_export(&mean, &labels, &dir.join("heatmap_mean.svg"))?;
    }
    Ok(specs.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub dir: PathBuf,
    pub runs: usize,
}

/// Metrics, μ ± σ summaries, significance table and analysis artifacts,
/// all derived from the run directories alone.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<ReportSummary, CliError> {
    let ws = workspace(cfg)?;
    let specs = completed_specs(&ws)?;
    let records: Vec<_> = specs.iter().filter_map(|s| ws.record(s)).collect();
    let dir = cfg.output_dir.join("report");
    create_dir(&dir)?;
    write_metrics_csv(&records, &dir.join("metrics.csv"))?;
    write_summary_csv(&summarize(&records)?, &dir.join("summary.csv"))?;
    let comparisons = cfg.comparison_list();
    if !comparisons.is_empty() {
        let rows = t_test_table(&records, &comparisons, Sided::OneLess);
        write(&dir.join("ttest.csv"), t_test_table_csv(&rows, &comparisons))?;
    }
    cmd_analyze(cfg)?;
    Ok(ReportSummary { dir, runs: specs.len() })
}
