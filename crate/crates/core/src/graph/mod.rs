//! Geographic and generated adjacency matrices.

mod generated;
mod geo;
mod matrix;
mod snapshot;

pub use generated::{
    apply_options, hard_threshold, mobility_indicator, normalize_sym, normalize_sym_on_tape,
    sparsify, sparsify_on_tape, spatial_attention, truncation_plan, AdjacencyOptions,
    GeneratedAdjacency, RhoSource, TruncationPlan,
};
pub use geo::{
    distance_std, gaussian_kernel_adjacency, geo_adjacency_from_table, haversine_km,
    haversine_matrix, mean_pairwise_distance, GeoAdjacency, EARTH_RADIUS_KM,
};
pub use matrix::SquareMatrix;
pub use snapshot::AdjacencySnapshot;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("kernel width must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("expected {expected} entries, found {found}")]
    InconsistentSize { expected: usize, found: usize },
    #[error("threshold {0} outside [0, 1]")]
    ThresholdRange(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
}
