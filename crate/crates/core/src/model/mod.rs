//! Forecasting networks built on the tape.

mod config;
mod layers;
mod network;
mod params;

pub use config::{ModelConfig, Variant};
pub use layers::{
    block_update, dual_fuse, gcn_propagate, positional_encoding, residual_norm, temporal_attention,
    AttentionVars,
};
pub use network::{dlinear_on_tape, forward, forward_batch, forward_on_tape, ForwardTrace, GraphContext};
pub use params::{ModelParams, ParamVars, CHECKPOINT_VERSION};

use std::path::Path;

use crate::numcore::NumError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("{0} needs a geographic adjacency matrix")]
    MissingGeo(Variant),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("input shape {found:?} does not match {expected:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Num(#[from] NumError),
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
