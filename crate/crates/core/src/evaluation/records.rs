use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean_std, t_test, EvalError, MeanStd, Sided, TTestResult};

/// One scored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub region_set: String,
    pub fold: String,
    pub horizon: usize,
    pub variant: String,
    pub channels: String,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
}

pub fn write_metrics_csv(records: &[MetricRecord], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| EvalError::csv(path, e))?;
    }
    w.flush().map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| EvalError::csv(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::csv(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Rmse,
}

impl Metric {
    pub fn of(self, r: &MetricRecord) -> f64 {
        match self {
            Metric::Mae => r.mae,
            Metric::Rmse => r.rmse,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
        }
    }
}

/// How fold results are combined in a summary row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// One row per fold; spread over seeds.
    PerFold,
    /// Each seed's scores averaged over folds first; spread over seeds.
    FoldsAveraged,
    /// Every (fold, seed) score treated as one sample.
    FoldsPooled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scope: Scope,
    pub region_set: String,
    pub fold: String,
    pub horizon: usize,
    pub variant: String,
    pub channels: String,
    pub n: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

type Cell = (String, usize, String, String);

fn cell(r: &MetricRecord) -> Cell {
    (r.region_set.clone(), r.horizon, r.variant.clone(), r.channels.clone())
}

fn row(scope: Scope, c: &Cell, fold: &str, mae: MeanStd, rmse: MeanStd) -> SummaryRow {
    SummaryRow {
        scope,
        region_set: c.0.clone(),
        fold: fold.to_string(),
        horizon: c.1,
        variant: c.2.clone(),
        channels: c.3.clone(),
        n: mae.n,
        mae_mean: mae.mean,
        mae_std: mae.std,
        rmse_mean: rmse.mean,
        rmse_std: rmse.std,
    }
}

/// Mean ± sample standard deviation for every experiment cell, in all
/// three scopes. Output order is deterministic.
pub fn summarize(records: &[MetricRecord]) -> Result<Vec<SummaryRow>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_fold: BTreeMap<(Cell, String), Vec<&MetricRecord>> = BTreeMap::new();
    let mut per_cell: BTreeMap<Cell, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        per_fold.entry((cell(r), r.fold.clone())).or_default().push(r);
        per_cell.entry(cell(r)).or_default().push(r);
    }
    let stats = |rs: &[&MetricRecord], m: Metric| mean_std(&rs.iter().map(|r| m.of(r)).collect::<Vec<_>>());
    let mut out = Vec::new();
    for ((c, fold), rs) in &per_fold {
        out.push(row(Scope::PerFold, c, fold, stats(rs, Metric::Mae)?, stats(rs, Metric::Rmse)?));
    }
    for (c, rs) in &per_cell {
        let mut by_seed: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in rs {
            let e = by_seed.entry(r.seed).or_default();
            e.0.push(r.mae);
            e.1.push(r.rmse);
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let maes: Vec<f64> = by_seed.values().map(|(m, _)| avg(m)).collect();
        let rmses: Vec<f64> = by_seed.values().map(|(_, r)| avg(r)).collect();
        out.push(row(Scope::FoldsAveraged, c, "all", mean_std(&maes)?, mean_std(&rmses)?));
        out.push(row(Scope::FoldsPooled, c, "all", stats(rs, Metric::Mae)?, stats(rs, Metric::Rmse)?));
    }
    Ok(out)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::csv(path, e))?;
    }
    w.flush().map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Which record field a comparison contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareBy {
    Channels,
    Variant,
}

/// Tests whether `a` has lower error than `b` (one-sided unless stated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub by: CompareBy,
    pub a: String,
    pub b: String,
}

impl Comparison {
    pub fn label(&self) -> String {
        format!("{} vs. {}", self.a, self.b)
    }

    fn key<'r>(&self, r: &'r MetricRecord) -> &'r str {
        match self.by {
            CompareBy::Channels => &r.channels,
            CompareBy::Variant => &r.variant,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTestRow {
    pub metric: Metric,
    pub region_set: String,
    /// One entry per comparison; `None` when either side has too few runs.
    pub results: Vec<Option<TTestResult>>,
}

/// Runs every comparison for every (metric, region set), pooling all
/// matching runs on each side.
pub fn t_test_table(records: &[MetricRecord], comparisons: &[Comparison], sided: Sided) -> Vec<TTestRow> {
    let mut regions: Vec<String> = records.iter().map(|r| r.region_set.clone()).collect();
    regions.sort();
    regions.dedup();
    let mut rows = Vec::new();
    for metric in [Metric::Mae, Metric::Rmse] {
        for region in &regions {
            let results = comparisons
                .iter()
                .map(|c| {
                    let side = |v: &str| -> Vec<f64> {
                        records
                            .iter()
                            .filter(|r| &r.region_set == region && c.key(r) == v)
                            .map(|r| metric.of(r))
                            .collect()
                    };
                    t_test(&side(&c.a), &side(&c.b), sided, false).ok()
                })
                .collect();
            rows.push(TTestRow {
                metric,
                region_set: region.clone(),
                results,
            });
        }
    }
    rows
}

/// CSV with the layout `metric,region_set,<a vs. b>,...` holding p-values.
pub fn t_test_table_csv(rows: &[TTestRow], comparisons: &[Comparison]) -> String {
    let mut s = String::from("metric,region_set");
    for c in comparisons {
        s.push(',');
        s.push_str(&c.label());
    }
    s.push('\n');
    for r in rows {
        s.push_str(r.metric.label());
        s.push(',');
        s.push_str(&r.region_set);
        for p in &r.results {
            s.push(',');
            if let Some(t) = p {
                s.push_str(&format!("{:.6}", t.p));
            }
        }
        s.push('\n');
    }
    s
}
