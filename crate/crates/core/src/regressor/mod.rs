//! The MLP prediction head and its training loop.
//!
//! Every embedder feeds the same machinery: targets are standardized with a
//! [`YNormalizer`], a 2×256 ReLU network is trained with AdamW for each cell
//! of a learning-rate × weight-decay grid, and the cell with the lowest
//! validation MSE wins.

mod adamw;
mod mlp;
mod model_file;
mod normalizer;
mod train;

pub use adamw::{adamw_step, AdamState, BETA1, BETA2, EPSILON};
pub use mlp::{Gradients, MlpModel, HIDDEN_WIDTH};
pub use model_file::{ModelFile, MODEL_FILE_VERSION};
pub use normalizer::{fit_normalizer, YNormalizer};
pub use train::{
    evaluate, fit_and_evaluate, predict, train, RegressionReport, SweepEntry, TrainConfig,
    DEFAULT_LEARNING_RATES, DEFAULT_WEIGHT_DECAYS,
};

use crate::metrics::MetricError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not enough data: {0}")]
    EmptyData(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("every grid cell diverged ({} cells)", sweep.len())]
    AllDiverged { sweep: Vec<SweepEntry> },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
