//! Error metrics, aggregation over seeds and significance tests.

mod metrics;
mod records;
mod stats;

pub use metrics::{deoverlap, deoverlapped_scores, mae, rmse, window_scores};
pub use records::{
    read_metrics_csv, summarize, t_test_table, t_test_table_csv, write_metrics_csv, write_summary_csv, CompareBy,
    Comparison, Metric, MetricRecord, Scope, SummaryRow, TTestRow,
};
pub use stats::{mean_std, student_t_tails, t_test, MeanStd, Sided, TTestResult, ALPHA};

use std::path::Path;

use crate::numcore::NumError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no values to score")]
    Empty,
    #[error("prediction has {pred} values but target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("expected a [samples, nodes, horizon] tensor, got {0:?}")]
    Shape(Vec<usize>),
    #[error("t-test needs at least two values per sample, got {a} and {b}")]
    TooFewSamples { a: usize, b: usize },
    #[error("both samples are constant and equal")]
    DegenerateVariance,
    #[error("{path}: {msg}")]
    Csv { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Num(#[from] NumError),
}

impl EvalError {
    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        EvalError::Csv {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}
