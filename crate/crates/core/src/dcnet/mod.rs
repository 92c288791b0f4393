//! Deep-clustering embedding network: a bidirectional GRU stack trained with
//! the weighted affinity loss, separating by K-means over embeddings.

mod checkpoint;
mod infer;
mod loss;
mod network;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use infer::{infer, infer_spectrogram, network_input, standardise, DcSeparation, InferenceConfig};
pub use loss::{weighted_dc_loss, weighted_dc_loss_grad};
pub use network::{EmbeddingMatrix, EmbeddingNetwork, NetworkConfig, ParamEntry, ParamLayout};
pub use train::{
    evaluate_loss, loss_gradient, train, train_with_progress, Adam, EpochRecord, PlateauScheduler, TrainingConfig,
    TrainingExample, TrainingOutcome,
};

use thiserror::Error;

use crate::container::ContainerError;
use crate::separation::SeparationError;
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum DcError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weights must be finite and non-negative, got {0}")]
    NegativeWeight(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("network parameters are untrained")]
    Untrained,
    #[error("need at least 2 sources, got {0}")]
    TooFewSources(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}
