//! Training-time clip transforms, multi-view expansion and the noisy
//! evaluation set.

mod noise;
mod registry;
mod transforms;
mod views;

pub use noise::{build_noise_eval_set, NoiseEvalSet, NoisePool};
pub use registry::{ClipTransform, TransformContext, TransformDescriptor, TransformRegistry};
pub use transforms::{
    hflip_clip, hflip_frame, noise_cutmix_clip, quarter_disc_contains, sample_sector, Corner,
    CornerSector, Flip, NoiseCutMix, DEFAULT_RADIUS_RANGE,
};
pub use views::{clip_seed, make_views, ViewSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("noise pool is empty")]
    EmptyPool,
    #[error("noise image {index} is {got:?}, frames are {want:?}")]
    PoolDims {
        index: usize,
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("unknown transform {0:?}")]
    UnknownTransform(String),
    #[error("invalid transform parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
}
