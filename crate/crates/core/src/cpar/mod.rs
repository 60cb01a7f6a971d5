//! Conditional probabilistic auto-regressive model.
//!
//! Each sequence is modeled step by step: a dense layer, a GRU and a second
//! dense layer read the previous row and emit per-column distribution
//! parameters for the next one. Categorical columns get a softmax head,
//! continuous columns a Gaussian with a missing-value probability, the
//! datetime index a Gaussian over the standardized start time and log gaps,
//! and a final logistic head decides whether the sequence continues.

mod encode;
mod loss;
mod model;
mod network;
mod sample;

pub use encode::{EncodedSequence, Layout, Scale, Target, Variable};
pub use loss::{categorical_loss, continuous_loss, gaussian_nll, stop_loss, MISS_CLAMP, PROB_FLOOR, SIGMA_FLOOR};
pub use model::{
    gradient_check, gradient_check_against, train, write_loss_curve, ContextVector, CparModel, GradientCheck,
    LossBreakdown, StepParams, Stepper, TrainReport, VariableParams, CHECKPOINT_FORMAT_VERSION, CONTINUE_TERM,
};
pub use network::Shape;
pub use sample::SampleLength;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::DataError;

#[derive(Debug, Error)]
pub enum CparError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("training data has no sequences")]
    EmptyData,
    #[error("data has no datetime sequence index")]
    NoSequenceIndex,
    #[error("unknown or unsupported column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` has an empty vocabulary")]
    EmptyVocabulary(String),
    #[error("column `{0}`: category {1:?} is not in the vocabulary")]
    UnknownCategory(String, String),
    #[error("column `{0}`: unexpected cell {1}")]
    BadCell(String, String),
    #[error("sequence `{key}` has {length} rows, above the maximum of {max}")]
    SequenceTooLong { key: String, length: usize, max: usize },
    #[error("non-finite loss in epoch {epoch} on sequence `{sequence}`")]
    NonFiniteLoss { epoch: usize, sequence: String },
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("metadata fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CparConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_sequence_length: usize,
    pub context_columns: Vec<String>,
}

impl Default for CparConfig {
    fn default() -> Self {
        CparConfig {
            hidden_size: 64,
            epochs: 1024,
            learning_rate: 1e-3,
            seed: 0,
            max_sequence_length: 4096,
            context_columns: Vec::new(),
        }
    }
}

impl CparConfig {
    pub fn validate(&self) -> Result<(), CparError> {
        let bad = |m: &str| Err(CparError::InvalidConfig(m.to_string()));
        if self.hidden_size == 0 {
            return bad("hidden_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.max_sequence_length == 0 {
            return bad("max_sequence_length must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}
