//! Panel ingestion, imputation, per-capita scaling, windowing and
//! chronological fold construction.

mod folds;
mod panel;
mod region;
pub mod synthetic;
mod window;

pub use folds::{apportion, progressive_folds, FoldId, FoldPolicy, FoldSplit};
pub use panel::{
    impute, load_panel, normalize_per_capita, read_normalized_panel, write_normalized_panel,
    Channel, ChannelSet, ImputationEntry, ImputationKind, ImputationLog, NormalizedPanel,
    RawPanel,
};
pub use region::{Region, RegionTable};
pub use window::{forecast_span, make_windows, reassemble, WindowSample};

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{path}:{line}: unknown region `{region}`")]
    UnknownRegion {
        path: PathBuf,
        line: u64,
        region: String,
    },
    #[error("{path}:{line}: duplicate row for ({date}, {region})")]
    Duplicate {
        path: PathBuf,
        line: u64,
        date: NaiveDate,
        region: String,
    },
    #[error("{path}:{line}: dates for region `{region}` are not increasing")]
    NonMonotone {
        path: PathBuf,
        line: u64,
        region: String,
    },
    #[error("invalid region table: {0}")]
    InvalidRegion(String),
    #[error("series ({region}, {channel}) has {observed} observations, need at least 2")]
    TooFewObservations {
        region: String,
        channel: Channel,
        observed: usize,
    },
    #[error("panel has {days} days, need at least {needed}")]
    PanelTooShort { days: usize, needed: usize },
    #[error("{samples} samples cannot fill non-empty splits (need at least {needed})")]
    TooFewSamples { samples: usize, needed: usize },
    #[error("channel set must be non-empty and contain incidence (I): {0}")]
    BadChannels(String),
    #[error("invalid fold policy: {0}")]
    BadPolicy(String),
}
