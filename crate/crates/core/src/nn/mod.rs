//! Small fully connected and graph convolutional networks trained to map
//! per-bus injections to dispatch controls, on a minimal reverse-mode tape.

mod checkpoint;
mod model;
mod tape;
mod train;

pub use checkpoint::{Checkpoint, NamedTensor, Tensor, TrainedModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{build_shift_operator, Activation, Family, Mode, Model, ModelConfig, Param, N_FEATURES, N_OUTPUTS};
pub use tape::{GraphShift, Matrix, Tape, Var};
pub use train::{
    hyper_search, loss_and_gradients, masked_loss, train, Encoder, EpochLoss, Hyper, HyperSpace, SearchResult,
    TrainReport, Trial,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset has no normalization statistics; split it first")]
    MissingStats,
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("validation loss became NaN at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
