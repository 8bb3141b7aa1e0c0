use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spatio::analysis::{ConnectivityRule, LockdownOptions};
use spatio::data::{Channel, ChannelSet, FoldId, FoldPolicy};
use spatio::evaluation::{Comparison, CompareBy};
use spatio::graph::AdjacencyOptions;
use spatio::model::{ModelConfig, Variant};
use spatio::training::TrainConfig;

use crate::CliError;

/// Input lengths and the forecast lengths studied with each.
pub const HORIZON_PAIRS: &[(usize, &[usize])] = &[(12, &[3, 6, 12, 24, 36]), (14, &[2, 7, 14])];

/// Architecture sizes shared by every run of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub hops: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(Variant::Trans, 1, 1, 1, 1);
        Self {
            d_model: m.d_model,
            heads: m.heads,
            layers: m.layers,
            hops: m.hops,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// CSV `region,start,end` of lockdown periods.
    pub lockdowns: Option<PathBuf>,
    pub lockdown: LockdownOptions,
    pub connectivity: ConnectivityRule,
}

/// Declarative description of one experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written into every metrics row.
    pub region_set: String,
    pub region_table: PathBuf,
    /// One `date,region,value` CSV per channel letter.
    pub data: BTreeMap<Channel, PathBuf>,
    /// Channel combinations to train, e.g. `["I", "IB"]`.
    pub channel_sets: Vec<String>,
    pub window: usize,
    pub horizons: Vec<usize>,
    pub variants: Vec<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Folds to run, e.g. `["1", "final"]`; all folds when empty.
    #[serde(default)]
    pub folds: Vec<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Accept horizons outside the studied (T, F) pairs.
    #[serde(default)]
    pub any_horizon: bool,
    /// Geographic cutoff in km; the mean pairwise distance when unset.
    #[serde(default)]
    pub geo_kappa: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "AdjacencyOptions::generated")]
    pub adjacency: AdjacencyOptions,
    #[serde(default)]
    pub fold_policy: FoldPolicy,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Significance comparisons for the report; by default every channel
    /// set is compared against `I` when both were trained.
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Parses a TOML file. Relative paths resolve against the file's
    /// directory; `out_override` replaces `output_dir`.
    pub fn load(path: &Path, out_override: Option<PathBuf>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Some(out) = out_override {
            cfg.output_dir = out;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.region_table);
        fix(&mut self.output_dir);
        self.data.values_mut().for_each(fix);
        if let Some(p) = self.analysis.lockdowns.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let mut paths = vec![&self.region_table];
        paths.extend(self.data.values());
        paths.extend(self.analysis.lockdowns.iter());
        for p in paths {
            if !p.exists() {
                return bad(format!("{}: file not found", p.display()));
            }
        }
        if self.channel_sets.is_empty() || self.variants.is_empty() || self.horizons.is_empty() || self.seeds.is_empty() {
            return bad("channel_sets, variants, horizons and seeds must be non-empty".into());
        }
        for set in self.channel_set_list()? {
            if let Some(c) = set.channels().iter().find(|c| !self.data.contains_key(c)) {
                return bad(format!("channel set {set} needs data for {c}"));
            }
        }
        if !self.any_horizon {
            let allowed = HORIZON_PAIRS.iter().find(|(t, _)| *t == self.window).map(|(_, f)| *f);
            match allowed {
                None => return bad(format!("input length {} is not one of the studied lengths (12, 14)", self.window)),
                Some(fs) => {
                    if let Some(h) = self.horizons.iter().find(|h| !fs.contains(h)) {
                        return bad(format!("horizon {h} is not studied with input length {}", self.window));
                    }
                }
            }
        }
        self.fold_list()?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.adjacency.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn channel_set_list(&self) -> Result<Vec<ChannelSet>, CliError> {
        self.channel_sets
            .iter()
            .map(|s| s.parse::<ChannelSet>().map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    /// The configured folds, or `None` for all of them.
    pub fn fold_list(&self) -> Result<Option<Vec<FoldId>>, CliError> {
        if self.folds.is_empty() {
            return Ok(None);
        }
        self.folds
            .iter()
            .map(|s| s.parse::<FoldId>().map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn comparison_list(&self) -> Vec<Comparison> {
        if !self.comparisons.is_empty() {
            return self.comparisons.clone();
        }
        let base = "I";
        if !self.channel_sets.iter().any(|s| s == base) {
            return Vec::new();
        }
        self.channel_sets
            .iter()
            .filter(|s| s.as_str() != base)
            .map(|s| Comparison {
                by: CompareBy::Channels,
                a: s.clone(),
                b: base.to_string(),
            })
            .collect()
    }

    /// SHA-256 over the canonical JSON of every field that affects results.
    /// The output directory is excluded; formatting, key order and spelled-out
    /// defaults do not change the hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_dir.join("runs")
    }

    pub fn panel_path(&self) -> PathBuf {
        self.output_dir.join("panel.csv")
    }
}
