use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::graph::SquareMatrix;

/// How a region's edges are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectivityRule {
    /// Non-zero off-diagonal entries in row i plus column i.
    #[default]
    RowAndColumn,
    /// Non-zero off-diagonal entries in row i only.
    RowOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RegionVotes {
    pub min_votes: usize,
    pub max_votes: usize,
}

fn degree(m: &SquareMatrix, i: usize, rule: ConnectivityRule) -> usize {
    let n = m.n();
    let row = (0..n).filter(|&j| j != i && m.get(i, j) != 0.0).count();
    match rule {
        ConnectivityRule::RowOnly => row,
        ConnectivityRule::RowAndColumn => row + (0..n).filter(|&j| j != i && m.get(j, i) != 0.0).count(),
    }
}

/// Per matrix, every least-connected region gets a min vote and every
/// most-connected region a max vote. Identity matrices cast no votes.
pub fn connectivity_votes(snapshots: &[SquareMatrix], rule: ConnectivityRule) -> Result<Vec<RegionVotes>, AnalysisError> {
    let n = snapshots.first().ok_or(AnalysisError::Empty)?.n();
    let mut votes = vec![RegionVotes::default(); n];
    for m in snapshots {
        if m.n() != n {
            return Err(AnalysisError::InconsistentSize {
                expected: n,
                found: m.n(),
            });
        }
        if m.is_identity() {
            continue;
        }
        let deg: Vec<usize> = (0..n).map(|i| degree(m, i, rule)).collect();
        let (lo, hi) = (deg.iter().min().copied().unwrap_or(0), deg.iter().max().copied().unwrap_or(0));
        for (v, &d) in votes.iter_mut().zip(&deg) {
            if d == lo {
                v.min_votes += 1;
            }
            if d == hi {
                v.max_votes += 1;
            }
        }
    }
    Ok(votes)
}

/// Mean of all strictly positive entries pooled over the snapshots.
pub fn avg_nonzero_weight(snapshots: &[SquareMatrix]) -> Result<f64, AnalysisError> {
    if snapshots.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let (sum, count) = snapshots
        .iter()
        .flat_map(|m| m.data().iter().copied())
        .filter(|&v| v > 0.0)
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return Err(AnalysisError::AllZero);
    }
    Ok(sum / count as f64)
}
