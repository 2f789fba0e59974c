use super::{AugmentError, NoisePool};
use crate::dataio::FrameImage;
use crate::numeric::Rng;
use serde::{Deserialize, Serialize};

/// Radius bounds as fractions of the image side.
pub const DEFAULT_RADIUS_RANGE: [f64; 2] = [0.25, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [
        Corner::TopLeft,
        Corner::TopRight,
        Corner::BottomLeft,
        Corner::BottomRight,
    ];

    /// Pixel index of the corner in a `width`×`height` frame.
    pub fn position(self, width: usize, height: usize) -> (usize, usize) {
        match self {
            Corner::TopLeft => (0, 0),
            Corner::TopRight => (width - 1, 0),
            Corner::BottomLeft => (0, height - 1),
            Corner::BottomRight => (width - 1, height - 1),
        }
    }

    pub fn mirrored(self) -> Corner {
        match self {
            Corner::TopLeft => Corner::TopRight,
            Corner::TopRight => Corner::TopLeft,
            Corner::BottomLeft => Corner::BottomRight,
            Corner::BottomRight => Corner::BottomLeft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerSector {
    pub corner: Corner,
    /// Pixels.
    pub radius: f64,
}

/// True when `(x, y)` lies strictly within `radius` of the sector's corner.
pub fn quarter_disc_contains(sector: &CornerSector, width: usize, height: usize, x: usize, y: usize) -> bool {
    let (cx, cy) = sector.corner.position(width, height);
    let dx = x as f64 - cx as f64;
    let dy = y as f64 - cy as f64;
    (dx * dx + dy * dy).sqrt() < sector.radius
}

/// Uniform corner, radius uniform in `range`·side.
pub fn sample_sector(rng: &mut Rng, side: usize, range: [f64; 2]) -> CornerSector {
    let corner = Corner::ALL[rng.below(4)];
    let radius = rng.uniform_range(range[0], range[1]) * side as f64;
    CornerSector { corner, radius }
}

pub fn hflip_frame(frame: &FrameImage) -> FrameImage {
    let mut pixels = Vec::with_capacity(frame.pixels.len());
    for row in frame.pixels.chunks(frame.width) {
        pixels.extend(row.iter().rev());
    }
    FrameImage::new(frame.width, frame.height, pixels)
}

/// One Bernoulli draw per clip; all frames flip together.
pub fn hflip_clip(frames: &[FrameImage], p: f64, rng: &mut Rng) -> Vec<FrameImage> {
    if rng.bernoulli(p) {
        frames.iter().map(hflip_frame).collect()
    } else {
        frames.to_vec()
    }
}

/// Replaces the quarter-disc of every frame with one noise image drawn from the pool.
pub fn noise_cutmix_clip(
    frames: &[FrameImage],
    pool: &NoisePool,
    sector: &CornerSector,
    rng: &mut Rng,
) -> Result<Vec<FrameImage>, AugmentError> {
    let noise = pool.draw(rng)?;
    let mut out = frames.to_vec();
    for f in &mut out {
        if (f.width, f.height) != (noise.width, noise.height) {
            return Err(AugmentError::PoolDims {
                index: 0,
                got: (noise.width, noise.height),
                want: (f.width, f.height),
            });
        }
        let (w, h) = (f.width, f.height);
        let reach = sector.radius.ceil().max(0.0) as usize;
        let (cx, cy) = sector.corner.position(w, h);
        let xs = cx.saturating_sub(reach)..(cx + reach + 1).min(w);
        let ys = cy.saturating_sub(reach)..(cy + reach + 1).min(h);
        for y in ys {
            for x in xs.clone() {
                if quarter_disc_contains(sector, w, h, x, y) {
                    f.set(x, y, noise.get(x, y));
                }
            }
        }
    }
    Ok(out)
}

/// Registry adapter for [`hflip_clip`].
#[derive(Debug, Clone)]
pub struct Flip {
    pub p: f64,
}

/// Registry adapter for [`noise_cutmix_clip`] with a sampled sector.
#[derive(Debug, Clone)]
pub struct NoiseCutMix {
    pub p: f64,
    pub radius_range: [f64; 2],
}
