//! Implicit neural representation of a signed distance field: the network,
//! its training loss, the trainer, and accuracy metrics.

mod loss;
mod metrics;
mod mlp;
mod sampling;
mod train;

pub use loss::{loss_and_gradient, loss_value, DataLoss, LossBreakdown, LossConfig, TrainSample};
pub use metrics::{distance_vector_similarity, nmse, write_similarity_csv, NmseReport, SimilarityReport, SimilarityRow};
pub use mlp::{Mlp, MlpConfig};
pub use sampling::{build_pool, sample_narrowband, sample_uniform, SampleMix, TrainingSource};
pub use train::{train, TrainConfig, TrainLogRow, TrainOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InrError {
    #[error("input has {got} components, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("training diverged at step {step} (loss {loss:e})")]
    Diverged { step: usize, loss: f64 },
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("no grid points with |s| < {delta} in the evaluation band")]
    EmptyBand { delta: f64 },
}
