//! Run configuration, model variants and the end-to-end commands.

mod config;
mod pipeline;
mod variants;

pub use config::{apply_overrides, ExperimentConfig, Preset};
pub use pipeline::{
    evaluate_on, init_model, load_model, noise_eval_on, prepare_data, train_on, run_eval, run_export_codes, run_gradcheck, run_noise_eval, run_synth, run_train, Dataset,
    EvalOutcome, NoiseOutcome, TrainOutcome,
};
pub use variants::{ModelVariant, VariantRegistry};

use crate::augment::AugmentError;
use crate::dataio::DataError;
use crate::model::ModelError;
use crate::numeric::TensorError;
use crate::train::TrainError;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("unknown model variant {name:?} (available: {available})")]
    UnknownVariant { name: String, available: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ExperimentError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) | Self::UnknownKey(_) | Self::UnknownVariant { .. } => "config",
            Self::Io { .. } => "io",
            Self::MissingCheckpoint(_) => "missing_checkpoint",
            Self::Data(_) => "data",
            Self::Augment(_) => "augment",
            Self::Model(_) => "model",
            Self::Train(_) => "train",
            Self::Tensor(_) => "tensor",
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ExperimentError {
    let path = path.into();
    move |source| ExperimentError::Io { path, source }
}
