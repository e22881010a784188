//! Embedding-based regression toolkit.
//!
//! The pipeline is: a [`task::RegressionTask`] produces labeled inputs, an
//! [`embedders::Embedder`] maps them to fixed-width vectors, and the
//! [`regressor`] trains the same two-layer MLP head on whatever embedding it
//! is given. [`nlfd`] measures how smooth the objective looks through an
//! embedding, and [`harness`] runs the experiment grids on top of all of it.

pub mod bbob;
pub mod embedders;
pub mod featurizer;
pub mod harness;
pub mod metrics;
pub mod nlfd;
pub mod regressor;
pub mod task;

pub use bbob::{BbobFunction, FunctionId};
pub use featurizer::{StringFormat, StringVariant};
pub use metrics::MetricBundle;
pub use nlfd::{NlfdComparison, NlfdSample};
pub use regressor::{MlpModel, RegressionReport, TrainConfig, YNormalizer};
pub use task::{Assignment, Dataset, LabeledExample, ParamSpec, ParamValue, RegressionTask};
