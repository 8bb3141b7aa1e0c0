//! Post-hoc reading of saved adjacency maps.

mod connectivity;
mod heatmap;
mod lockdown;

pub use connectivity::{avg_nonzero_weight, connectivity_votes, ConnectivityRule, RegionVotes};
pub use heatmap::{heatmap_export, heatmap_svg, ramp_color};
pub use lockdown::{
    indicator_table_csv, lockdown_indicator_table, read_lockdown_windows, IndicatorTableRow, LockdownOptions,
    LockdownWindow,
};

use std::path::Path;

use crate::graph::{AdjacencySnapshot, GraphError};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no snapshots given")]
    Empty,
    #[error("snapshot has {found} nodes, expected {expected}")]
    InconsistentSize { expected: usize, found: usize },
    #[error("no strictly positive weight in any snapshot")]
    AllZero,
    #[error("lockdown window for `{region}` ends before it starts")]
    BadWindow { region: String },
    #[error("{expected} labels needed, got {found}")]
    Labels { expected: usize, found: usize },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub(crate) fn io(path: &Path, source: std::io::Error) -> AnalysisError {
    AnalysisError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Every `*.csv` snapshot in `dir`, in file-name order.
pub fn read_snapshot_dir(dir: &Path) -> Result<Vec<AdjacencySnapshot>, AnalysisError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| AdjacencySnapshot::read(p).map_err(AnalysisError::from))
        .collect()
}
