use super::transforms::{noise_cutmix_clip, sample_sector, DEFAULT_RADIUS_RANGE};
use super::views::clip_seed;
use super::AugmentError;
use crate::dataio::{crop_resize, read_pgm, ClipSample, FrameImage, SamplingConfig};
use crate::numeric::Rng;
use std::path::Path;

/// Air-echo noise images, all with the processed frame dims.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePool {
    images: Vec<FrameImage>,
}

impl NoisePool {
    pub fn new(images: Vec<FrameImage>) -> Result<Self, AugmentError> {
        let first = images.first().ok_or(AugmentError::EmptyPool)?;
        let want = (first.width, first.height);
        for (index, im) in images.iter().enumerate() {
            if (im.width, im.height) != want {
                return Err(AugmentError::PoolDims {
                    index,
                    got: (im.width, im.height),
                    want,
                });
            }
        }
        Ok(Self { images })
    }

    /// Loads every `*.pgm` in `dir` (sorted by name) and preprocesses it like a frame.
    pub fn load(dir: &Path, cfg: &SamplingConfig) -> Result<Self, AugmentError> {
        let listing = std::fs::read_dir(dir).map_err(|e| crate::dataio::DataError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let mut paths: Vec<_> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        let images = paths
            .iter()
            .map(|p| read_pgm(p).map(|f| crop_resize(&f, cfg)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(images)
    }

    pub fn images(&self) -> &[FrameImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn draw(&self, rng: &mut Rng) -> Result<&FrameImage, AugmentError> {
        if self.images.is_empty() {
            return Err(AugmentError::EmptyPool);
        }
        Ok(&self.images[rng.below(self.images.len())])
    }
}

#[derive(Debug, Clone)]
pub struct NoiseEvalSet {
    pub clips: Vec<ClipSample>,
    /// Parallel to `clips`: whether Noise CutMix was applied.
    pub augmented: Vec<bool>,
}

/// Applies Noise CutMix to `round(fraction·n)` clips chosen by a seeded
/// shuffle of the sorted clip ids; the rest are passed through untouched.
pub fn build_noise_eval_set(
    clips: &[ClipSample],
    pool: &NoisePool,
    fraction: f64,
    seed: u64,
) -> Result<NoiseEvalSet, AugmentError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(AugmentError::Invalid(format!("fraction {fraction} outside [0,1]")));
    }
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.sort_by(|&a, &b| clips[a].window.id().cmp(&clips[b].window.id()));
    Rng::derived(seed, "noise-eval/select").shuffle(&mut order);
    let take = (fraction * clips.len() as f64).round() as usize;
    let mut augmented = vec![false; clips.len()];
    for &i in &order[..take] {
        augmented[i] = true;
    }
    let mut out = Vec::with_capacity(clips.len());
    for (clip, &aug) in clips.iter().zip(&augmented) {
        if !aug {
            out.push(clip.clone());
            continue;
        }
        let w = &clip.window;
        let mut rng = Rng::new(clip_seed(seed, &w.case_id, w.start));
        let side = clip.frames[0].width.min(clip.frames[0].height);
        let sector = sample_sector(&mut rng, side, DEFAULT_RADIUS_RANGE);
        let frames = noise_cutmix_clip(&clip.frames, pool, &sector, &mut rng)?;
        out.push(ClipSample {
            frames,
            ..clip.clone()
        });
    }
    Ok(NoiseEvalSet {
        clips: out,
        augmented,
    })
}
