use super::registry::{TransformContext, TransformDescriptor, TransformRegistry};
use super::AugmentError;
use crate::dataio::FrameImage;
use crate::numeric::{mix_seed, Rng};
use serde::{Deserialize, Serialize};

/// Seed for one clip: master seed mixed with case id and window start.
pub fn clip_seed(seed: u64, case_id: &str, start: usize) -> u64 {
    mix_seed(seed, format!("{case_id}#{start}").as_bytes())
}

/// Transform lists for each of the K views of a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub views: Vec<Vec<TransformDescriptor>>,
}

impl ViewSpec {
    /// View 0 flips only; views 1..k also apply Noise CutMix.
    pub fn standard(k: usize, flip_p: f64, cutmix_p: f64, radius_range: [f64; 2]) -> Self {
        let views = (0..k)
            .map(|v| {
                let mut t = vec![TransformDescriptor::flip(flip_p)];
                if v > 0 {
                    t.push(TransformDescriptor::noise_cutmix(cutmix_p, radius_range));
                }
                t
            })
            .collect();
        Self { views }
    }

    pub fn k(&self) -> usize {
        self.views.len()
    }
}

/// Expands one clip into K independently augmented views. View `v` draws
/// from its own stream derived from `seed`.
pub fn make_views(
    frames: &[FrameImage],
    spec: &ViewSpec,
    registry: &TransformRegistry,
    ctx: &TransformContext<'_>,
    seed: u64,
) -> Result<Vec<Vec<FrameImage>>, AugmentError> {
    if spec.k() < 2 {
        return Err(AugmentError::Invalid(format!("need at least 2 views, got {}", spec.k())));
    }
    spec.views
        .iter()
        .enumerate()
        .map(|(v, transforms)| {
            let mut rng = Rng::new(mix_seed(seed, format!("view{v}").as_bytes()));
            let mut out = frames.to_vec();
            for d in transforms {
                out = registry.build(d)?.apply(out, ctx, &mut rng)?;
            }
            Ok(out)
        })
        .collect()
}
