//! Training: cross-entropy loss, Adam, the epoch loop with early stopping
//! on test accuracy, checkpoints and the CSV epoch log.

mod adam;
mod checkpoint;
mod fit;
mod log;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint,
    Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use fit::{
    argmax, cross_entropy, evaluate, fit, run_loop, train_epoch, EarlyStopping, EpochRunner,
    EpochStats, Evaluation, FitOutcome, LoopSummary, Observation, BEST_CHECKPOINT, TRAIN_LOG,
};
pub use log::{format_record, log_epoch, read_log, EpochRecord, LOG_HEADER};

use std::path::PathBuf;

use thiserror::Error;

use crate::dataio::DataError;
use crate::tensor::TensorError;
use crate::vit::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Optimisation and loop settings. Defaults: learning rate 1e-4, batch 32,
/// up to 50 epochs, patience 10, Adam (0.9, 0.999, 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Reshuffle the training indices every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(TrainError::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}
