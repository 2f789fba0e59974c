//! Frame storage, manifests, clip windows, preprocessing and case splits.

mod clips;
mod manifest;
mod pgm;
mod preprocess;
mod split;

pub use clips::{enumerate_clips, ClipSample, ClipWindow, SamplingConfig};
pub use manifest::{load_manifest, write_manifest, CaseRecord, Label, ManifestEntry};
pub use pgm::{parse_pgm, read_pgm, write_pgm, FrameImage};
pub use preprocess::{center_crop_offsets, crop_resize, load_case_frames};
pub use split::{split_cases, DatasetSplit};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: malformed PGM at byte {offset}: {reason}")]
    Pgm {
        path: PathBuf,
        offset: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("case {case_id}: {reason}")]
    Case { case_id: String, reason: String },
    #[error("invalid sampling config: {0}")]
    Sampling(String),
    #[error("split: {0}")]
    Split(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
