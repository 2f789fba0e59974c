use super::transforms::{hflip_clip, noise_cutmix_clip, sample_sector, Flip, NoiseCutMix, DEFAULT_RADIUS_RANGE};
use super::{AugmentError, NoisePool};
use crate::dataio::FrameImage;
use crate::numeric::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Resources a transform may need beyond the clip itself.
#[derive(Clone, Copy, Default)]
pub struct TransformContext<'a> {
    pub noise_pool: Option<&'a NoisePool>,
}

/// A clip-level stochastic transform. Every frame of a clip receives the
/// same draw.
pub trait ClipTransform: Send + Sync {
    fn name(&self) -> &'static str;

    fn apply(
        &self,
        frames: Vec<FrameImage>,
        ctx: &TransformContext<'_>,
        rng: &mut Rng,
    ) -> Result<Vec<FrameImage>, AugmentError>;
}

impl ClipTransform for Flip {
    fn name(&self) -> &'static str {
        "flip"
    }

    fn apply(&self, frames: Vec<FrameImage>, _: &TransformContext<'_>, rng: &mut Rng) -> Result<Vec<FrameImage>, AugmentError> {
        Ok(hflip_clip(&frames, self.p, rng))
    }
}

impl ClipTransform for NoiseCutMix {
    fn name(&self) -> &'static str {
        "noise_cutmix"
    }

    fn apply(&self, frames: Vec<FrameImage>, ctx: &TransformContext<'_>, rng: &mut Rng) -> Result<Vec<FrameImage>, AugmentError> {
        // Draw order is fixed (gate, sector, noise image) so streams stay aligned.
        if !rng.bernoulli(self.p) || frames.is_empty() {
            return Ok(frames);
        }
        let pool = ctx.noise_pool.ok_or(AugmentError::EmptyPool)?;
        let side = frames[0].width.min(frames[0].height);
        let sector = sample_sector(rng, side, self.radius_range);
        noise_cutmix_clip(&frames, pool, &sector, rng)
    }
}

/// Serializable description of one transform in a view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformDescriptor {
    pub kind: String,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_range: Option<[f64; 2]>,
}

impl TransformDescriptor {
    pub fn flip(p: f64) -> Self {
        Self {
            kind: "flip".into(),
            p,
            radius_range: None,
        }
    }

    pub fn noise_cutmix(p: f64, radius_range: [f64; 2]) -> Self {
        Self {
            kind: "noise_cutmix".into(),
            p,
            radius_range: Some(radius_range),
        }
    }
}

type Factory = fn(&TransformDescriptor) -> Result<Box<dyn ClipTransform>, AugmentError>;

/// Name → constructor table for clip transforms.
pub struct TransformRegistry {
    factories: BTreeMap<String, Factory>,
}

fn check_p(d: &TransformDescriptor) -> Result<(), AugmentError> {
    if !(0.0..=1.0).contains(&d.p) {
        return Err(AugmentError::Invalid(format!("{}: p={} outside [0,1]", d.kind, d.p)));
    }
    Ok(())
}

impl Default for TransformRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("flip", |d| {
            check_p(d)?;
            Ok(Box::new(Flip { p: d.p }))
        });
        r.register("noise_cutmix", |d| {
            check_p(d)?;
            let range = d.radius_range.unwrap_or(DEFAULT_RADIUS_RANGE);
            if !(range[0] >= 0.0 && range[0] <= range[1] && range[1] <= 1.0) {
                return Err(AugmentError::Invalid(format!("radius_range {range:?}")));
            }
            Ok(Box::new(NoiseCutMix { p: d.p, radius_range: range }))
        });
        r
    }
}

impl TransformRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: Factory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, d: &TransformDescriptor) -> Result<Box<dyn ClipTransform>, AugmentError> {
        let f = self
            .factories
            .get(&d.kind)
            .ok_or_else(|| AugmentError::UnknownTransform(d.kind.clone()))?;
        f(d)
    }
}
