//! Training loop, case-level evaluation, metrics, code distributions,
//! checkpoints and CSV reports.

mod checkpoint;
mod eval;
mod loop_;
mod metrics;
mod report;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, restore, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use eval::{
    aggregate_case, evaluate_cases, export_code_distribution, predict_clips, CaseEvaluation, CaseScore, CodeDistribution,
};
pub use loop_::{clip_batch, total_loss, BatchLoss, EpochStats, TrainConfig, Trainer};
pub use metrics::{auc, confusion_metrics, MetricsReport};
pub use report::{codes_csv, epoch_csv, metrics_csv, noise_metrics_csv, METRICS_HEADER};

use crate::augment::AugmentError;
use crate::dataio::DataError;
use crate::model::ModelError;
use crate::numeric::TensorError;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(
        "non-finite loss at epoch {epoch} batch {batch} (cls={cls}, swav={swav:?}); clips: {}",
        clips.join(", ")
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        clips: Vec<String>,
        cls: f64,
        swav: Option<f64>,
    },
    #[error("checkpoint {path}: {reason} at byte {offset}")]
    Checkpoint { path: PathBuf, offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
