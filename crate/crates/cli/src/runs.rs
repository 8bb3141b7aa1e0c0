use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use spatio::data::{make_windows, progressive_folds, ChannelSet, FoldId, FoldSplit, NormalizedPanel, WindowSample};
use spatio::evaluation::{deoverlapped_scores, MetricRecord};
use spatio::graph::{AdjacencySnapshot, GeoAdjacency};
use spatio::model::{GraphContext, ModelConfig, ModelParams, Variant};
use spatio::numcore::Tensor;
use spatio::training::{predict_with_snapshots, select_channel, train, SampleSet};

use crate::{CliError, ExperimentConfig};

pub const MANIFEST_VERSION: u32 = 1;

/// One point of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub channels: ChannelSet,
    pub variant: Variant,
    pub horizon: usize,
    pub fold: FoldId,
    pub seed: u64,
}

impl RunSpec {
    /// Directory name, e.g. `IB_trans_adp_F3_fold2_s0`.
    pub fn id(&self) -> String {
        format!(
            "{}_{}_F{}_fold{}_s{}",
            self.channels,
            self.variant.slug(),
            self.horizon,
            self.fold,
            self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub run_id: String,
    pub config_hash: String,
    pub region_set: String,
    pub channels: String,
    pub variant: Variant,
    pub horizon: usize,
    pub fold: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub best_step: Option<usize>,
    #[serde(default)]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join("manifest.json")).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub test_samples: usize,
}

/// Everything a run needs that is shared across the grid.
pub struct Workspace<'a> {
    pub cfg: &'a ExperimentConfig,
    pub panel: NormalizedPanel,
    pub geo: GeoAdjacency,
    pub hash: String,
}

/// Windows, samples and folds for one (channel set, horizon).
pub struct Prepared {
    pub windows: Vec<WindowSample>,
    pub data: SampleSet,
    pub folds: Vec<FoldSplit>,
}

impl Workspace<'_> {
    pub fn prepare(&self, channels: &ChannelSet, horizon: usize) -> Result<Prepared, CliError> {
        let panel = self.panel.select(channels)?;
        let windows = make_windows(&panel, self.cfg.window, horizon)?;
        let data = SampleSet::from_windows(&windows, channels.incidence_index())
            .ok_or_else(|| CliError::Config("panel yields no samples".into()))?;
        let folds = progressive_folds(data.len(), &self.cfg.fold_policy)?;
        Ok(Prepared { windows, data, folds })
    }

    /// The grid in a fixed order: channel set, variant, horizon, fold, seed.
    pub fn plan(&self) -> Result<Vec<RunSpec>, CliError> {
        let wanted = self.cfg.fold_list()?;
        let mut out = Vec::new();
        for channels in self.cfg.channel_set_list()? {
            for &variant in &self.cfg.variants {
                for &horizon in &self.cfg.horizons {
                    let n_samples = self.panel.days().saturating_sub(self.cfg.window + horizon - 1);
                    let ids: Vec<FoldId> = progressive_folds(n_samples, &self.cfg.fold_policy)?
                        .into_iter()
                        .map(|f| f.id)
                        .filter(|id| wanted.as_ref().map_or(true, |w| w.contains(id)))
                        .collect();
                    for fold in ids {
                        for &seed in &self.cfg.seeds {
                            out.push(RunSpec {
                                channels: channels.clone(),
                                variant,
                                horizon,
                                fold,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn run_dir(&self, spec: &RunSpec) -> PathBuf {
        self.cfg.runs_dir().join(spec.id())
    }

    pub fn model_config(&self, spec: &RunSpec) -> Result<ModelConfig, CliError> {
        let o = &self.cfg.model;
        let mut mc = ModelConfig::new(
            spec.variant,
            self.panel.regions.len(),
            self.cfg.window,
            spec.horizon,
            spec.channels.len(),
        );
        mc.d_model = o.d_model;
        mc.heads = o.heads;
        mc.layers = o.layers;
        mc.hops = o.hops;
        mc.validate()?;
        Ok(mc)
    }

    pub fn context(&self) -> GraphContext {
        GraphContext::new(Some(&self.geo), self.cfg.adjacency.clone())
    }

    fn manifest(&self, spec: &RunSpec, status: RunStatus) -> Manifest {
        Manifest {
            version: MANIFEST_VERSION,
            run_id: spec.id(),
            config_hash: self.hash.clone(),
            region_set: self.cfg.region_set.clone(),
            channels: spec.channels.to_string(),
            variant: spec.variant,
            horizon: spec.horizon,
            fold: spec.fold.to_string(),
            seed: spec.seed,
            status,
            error: None,
            best_step: None,
            checkpoint: None,
            model: None,
        }
    }

    /// Trains one run into a fresh directory. Failures are recorded in the
    /// run's manifest and returned.
    pub fn execute(&self, spec: &RunSpec, prep: &Prepared) -> Result<RunMetrics, CliError> {
        let dir = self.run_dir(spec);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let result = self.train_into(spec, prep, &dir);
        if let Err(e) = &result {
            let mut m = self.manifest(spec, RunStatus::Failed);
            m.error = Some(e.to_string());
            m.write(&dir)?;
        }
        result
    }

    fn train_into(&self, spec: &RunSpec, prep: &Prepared, dir: &Path) -> Result<RunMetrics, CliError> {
        let mc = self.model_config(spec)?;
        let fold = prep
            .folds
            .iter()
            .find(|f| f.id == spec.fold)
            .ok_or_else(|| CliError::Config(format!("fold {} does not exist", spec.fold)))?;
        let ctx = self.context();
        log::info!("training {}", spec.id());
        let outcome = train(&self.cfg.train, &mc, fold, &prep.data, &ctx, spec.seed)?;
        outcome.history.write_csv(&dir.join("history.csv"))?;
        let step = outcome.history.best_step.unwrap_or(0);
        let ckpt = format!("ckpt-{step}");
        outcome.params.save(&dir.join(&ckpt))?;
        let metrics = self.score(spec, prep, &mc, &outcome.params, dir)?;
        let mut m = self.manifest(spec, RunStatus::Complete);
        m.best_step = outcome.history.best_step;
        m.checkpoint = Some(ckpt);
        m.model = Some(mc);
        m.write(dir)?;
        log::info!("finished {}: test MAE {:.6}", spec.id(), metrics.mae);
        Ok(metrics)
    }

    /// Reloads the run's checkpoint and rewrites its test-range artifacts.
    pub fn rescore(&self, spec: &RunSpec, prep: &Prepared) -> Result<RunMetrics, CliError> {
        let dir = self.run_dir(spec);
        let m = Manifest::read(&dir)
            .filter(|m| m.status == RunStatus::Complete)
            .ok_or_else(|| CliError::MissingRuns {
                completed: 0,
                missing: vec![spec.id()],
            })?;
        let mc = m.model.clone().ok_or_else(|| CliError::Config(format!("{}: manifest lacks model", spec.id())))?;
        let ckpt = m.checkpoint.clone().unwrap_or_default();
        let params = ModelParams::load(&dir.join(ckpt))?;
        self.score(spec, prep, &mc, &params, &dir)
    }

    /// Test-range predictions, de-overlapped incidence scores and, for
    /// generated-graph variants, every block's adjacency per test sample.
    fn score(
        &self,
        spec: &RunSpec,
        prep: &Prepared,
        mc: &ModelConfig,
        params: &ModelParams,
        dir: &Path,
    ) -> Result<RunMetrics, CliError> {
        let fold = prep.folds.iter().find(|f| f.id == spec.fold).expect("fold checked");
        let range = fold.test.clone();
        let idx: Vec<usize> = range.clone().collect();
        let (pred, snaps) = predict_with_snapshots(mc, params, &prep.data, range.clone(), &self.context())?;
        let inc = if mc.d_out() == 1 { 0 } else { prep.data.incidence };
        let target = prep.data.targets(&idx, mc.d_out());
        let (p, t) = (select_channel(&pred, inc), select_channel(&target, inc));
        let shape3 = [idx.len(), mc.nodes, mc.horizon];
        let (p, t) = (p.reshape(&shape3).map_err(to_model)?, t.reshape(&shape3).map_err(to_model)?);
        let (mae, rmse) = deoverlapped_scores(&p, &t)?;
        self.write_predictions(&dir.join("predictions.csv"), prep, &idx, &p, &t)?;
        let metrics = RunMetrics {
            mae,
            rmse,
            test_samples: idx.len(),
        };
        let mp = dir.join("metrics.json");
        fs::write(&mp, serde_json::to_string_pretty(&metrics).expect("serializes") + "\n")
            .map_err(|e| CliError::io(&mp, e))?;
        if spec.variant.uses_adp() {
            let sd = dir.join("snapshots");
            if sd.exists() {
                fs::remove_dir_all(&sd).map_err(|e| CliError::io(&sd, e))?;
            }
            fs::create_dir_all(&sd).map_err(|e| CliError::io(&sd, e))?;
            for (k, blocks) in idx.iter().zip(&snaps) {
                for (b, g) in blocks.iter().enumerate() {
                    AdjacencySnapshot {
                        block: b,
                        sample_start: prep.windows[*k].start_date,
                        weights: g.weights.clone(),
                    }
                    .write(&sd.join(format!("s{k:05}_b{b}.csv")))?;
                }
            }
        }
        Ok(metrics)
    }

    fn write_predictions(&self, path: &Path, prep: &Prepared, idx: &[usize], p: &Tensor, t: &Tensor) -> Result<(), CliError> {
        let (n, f) = (p.shape()[1], p.shape()[2]);
        let mut s = String::from("sample,target_date,region,lead,pred,target\n");
        for (row, &k) in idx.iter().enumerate() {
            let first = prep.windows[k].start_date + Duration::days(self.cfg.window as i64);
            for r in 0..n {
                for h in 0..f {
                    let _ = writeln!(
                        s,
                        "{k},{},{},{},{:?},{:?}",
                        first + Duration::days(h as i64),
                        self.panel.regions[r],
                        h + 1,
                        p.get(&[row, r, h]),
                        t.get(&[row, r, h])
                    );
                }
            }
        }
        fs::write(path, s).map_err(|e| CliError::io(path, e))
    }

    /// The metrics row of a completed run, if it has one.
    pub fn record(&self, spec: &RunSpec) -> Option<MetricRecord> {
        let dir = self.run_dir(spec);
        let m = Manifest::read(&dir)?;
        if m.status != RunStatus::Complete {
            return None;
        }
        let text = fs::read_to_string(dir.join("metrics.json")).ok()?;
        let rm: RunMetrics = serde_json::from_str(&text).ok()?;
        Some(MetricRecord {
            region_set: m.region_set,
            fold: m.fold,
            horizon: m.horizon,
            variant: m.variant.label().to_string(),
            channels: m.channels,
            seed: m.seed,
            mae: rm.mae,
            rmse: rm.rmse,
        })
    }
}

fn to_model(e: spatio::numcore::NumError) -> CliError {
    CliError::Model(e.into())
}
