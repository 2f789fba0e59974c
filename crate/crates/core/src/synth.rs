//! Synthetic ultrasound-like case videos and air-echo noise images.

use crate::dataio::{write_manifest, write_pgm, DataError, FrameImage, Label, ManifestEntry};
use crate::numeric::{mix_seed, Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub cases_per_class: usize,
    pub frames_per_case: usize,
    pub image_side: usize,
    pub frame_period_s: f64,
    pub seed: u64,
    pub noise_pool_size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            cases_per_class: 30,
            frames_per_case: 40,
            image_side: 256,
            frame_period_s: 0.1,
            seed: 0,
            noise_pool_size: 237,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.cases_per_class == 0 || self.frames_per_case == 0 || self.noise_pool_size == 0 || self.image_side < MIN_SIDE {
            return Err(DataError::Sampling(format!(
                "synthetic counts must be positive and image_side at least {MIN_SIDE}: {self:?}"
            )));
        }
        if !(self.frame_period_s > 0.0) {
            return Err(DataError::Sampling(format!("frame_period_s must be positive, got {}", self.frame_period_s)));
        }
        Ok(())
    }
}

/// Upper bound on a benign case's mean local variance and lower bound on a
/// malignant case's; generation retries until its case lands on its side.
pub const BENIGN_MAX_LOCAL_VAR: f64 = 110.0;
pub const MALIGNANT_MIN_LOCAL_VAR: f64 = 150.0;
const MAX_ATTEMPTS: usize = 64;
/// Below this the lesion boundary dominates the texture statistic.
pub const MIN_SIDE: usize = 48;
const WINDOW: usize = 5;

/// Mean over all 5×5 windows of the within-window intensity variance.
pub fn mean_local_variance(frame: &FrameImage) -> f64 {
    let (w, h) = (frame.width, frame.height);
    if w < WINDOW || h < WINDOW {
        return 0.0;
    }
    let stride = w + 1;
    let mut s = vec![0.0f64; (w + 1) * (h + 1)];
    let mut s2 = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let v = frame.get(x, y) as f64;
            let i = (y + 1) * stride + x + 1;
            s[i] = v + s[i - 1] + s[i - stride] - s[i - stride - 1];
            s2[i] = v * v + s2[i - 1] + s2[i - stride] - s2[i - stride - 1];
        }
    }
    let box_sum = |t: &[f64], x: usize, y: usize| {
        t[(y + WINDOW) * stride + x + WINDOW] - t[y * stride + x + WINDOW] - t[(y + WINDOW) * stride + x] + t[y * stride + x]
    };
    let n = (WINDOW * WINDOW) as f64;
    let mut total = 0.0;
    for y in 0..=h - WINDOW {
        for x in 0..=w - WINDOW {
            let m = box_sum(&s, x, y) / n;
            total += box_sum(&s2, x, y) / n - m * m;
        }
    }
    total / ((w - WINDOW + 1) * (h - WINDOW + 1)) as f64
}

/// Piecewise-constant noise on a grid of `cell`-pixel squares.
struct CellNoise {
    cols: usize,
    cell: usize,
    values: Vec<f64>,
}

impl CellNoise {
    fn new(rng: &mut Rng, side: usize, cell: usize) -> Self {
        let cols = side.div_ceil(cell) + 1;
        Self {
            cols,
            cell,
            values: (0..cols * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let cx = (x.max(0.0) as usize / self.cell).min(self.cols - 1);
        let cy = (y.max(0.0) as usize / self.cell).min(self.cols - 1);
        self.values[cy * self.cols + cx]
    }
}

struct Lesion {
    cx: f64,
    cy: f64,
    dx: f64,
    dy: f64,
    a: f64,
    b: f64,
    angle: f64,
    /// (harmonic, amplitude, phase) boundary modulation.
    lobes: Vec<(f64, f64, f64)>,
}

impl Lesion {
    fn sample(rng: &mut Rng, side: f64, lobulated: bool) -> Self {
        let lobes = if lobulated {
            (0..3)
                .map(|_| (3.0 + rng.below(4) as f64, rng.uniform_range(0.08, 0.18), rng.uniform_range(0.0, 2.0 * PI)))
                .collect()
        } else {
            Vec::new()
        };
        let drift = side * 0.002;
        Self {
            cx: side * rng.uniform_range(0.4, 0.6),
            cy: side * rng.uniform_range(0.4, 0.6),
            dx: rng.uniform_range(-drift, drift),
            dy: rng.uniform_range(-drift, drift),
            a: side * rng.uniform_range(0.18, 0.28),
            b: side * rng.uniform_range(0.14, 0.22),
            angle: rng.uniform_range(0.0, PI),
            lobes,
        }
    }

    /// Signed boundary coordinate in lesion-local units: < 1 inside.
    fn radius(&self, x: f64, y: f64, t: usize) -> (f64, f64, f64) {
        let (px, py) = (x - self.cx - self.dx * t as f64, y - self.cy - self.dy * t as f64);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (u, v) = ((px * c + py * s) / self.a, (-px * s + py * c) / self.b);
        let theta = v.atan2(u);
        let edge = 1.0 + self.lobes.iter().map(|(k, amp, ph)| amp * (k * theta + ph).sin()).sum::<f64>();
        ((u * u + v * v).sqrt() / edge, u * self.a, v * self.b)
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn render_case(label: Label, frames: usize, side: usize, rng: &mut Rng) -> Vec<FrameImage> {
    let sidef = side as f64;
    let malignant = label.is_positive();
    let lesion = Lesion::sample(rng, sidef, malignant);
    let background = CellNoise::new(rng, side, 2);
    let bg_level = rng.uniform_range(35.0, 50.0);
    let interior = CellNoise::new(rng, 2 * side, 3);
    let level = rng.uniform_range(100.0, 125.0);
    let dots: Vec<(f64, f64)> = if malignant {
        (0..12 + rng.below(16))
            .map(|_| {
                let r = rng.uniform().sqrt() * 0.85;
                let t = rng.uniform_range(0.0, 2.0 * PI);
                (r * t.cos() * lesion.a, r * t.sin() * lesion.b)
            })
            .collect()
    } else {
        Vec::new()
    };
    let dot_radius = (sidef / 96.0).max(1.0);
    (0..frames)
        .map(|t| {
            let frame_noise = CellNoise::new(rng, side, 1);
            let flicker_cells = malignant.then(|| CellNoise::new(rng, 2 * side, 3));
            let gain = if malignant { rng.uniform_range(-18.0, 18.0) } else { 0.0 };
            let mut px = Vec::with_capacity(side * side);
            for y in 0..side {
                for x in 0..side {
                    let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
                    let bg = bg_level + 14.0 * background.at(xf, yf) + 3.0 * frame_noise.at(xf, yf);
                    let (r, u, v) = lesion.radius(xf, yf, t);
                    let inside = if malignant {
                        (r < 1.0) as u8 as f64
                    } else {
                        ((1.0 - r) * lesion.a.min(lesion.b) / 2.0 + 0.5).clamp(0.0, 1.0)
                    };
                    if inside <= 0.0 {
                        px.push(clamp_u8(bg));
                        continue;
                    }
                    let (lu, lv) = (u + sidef, v + sidef);
                    let tissue = match &flicker_cells {
                        None => level + 5.0 * interior.at(lu, lv) + 2.0 * frame_noise.at(xf, yf),
                        Some(f) => {
                            let mut val = level + gain + 28.0 * interior.at(lu, lv) + 28.0 * f.at(lu, lv);
                            if dots.iter().any(|(dx, dy)| (u - dx).hypot(v - dy) < dot_radius) {
                                val = 240.0 + 10.0 * frame_noise.at(xf, yf);
                            }
                            val
                        }
                    };
                    px.push(clamp_u8(inside * tissue + (1.0 - inside) * bg));
                }
            }
            FrameImage::new(side, side, px)
        })
        .collect()
}

/// Deterministic frames for case `index` of `label`, regenerated until the
/// case's mean local variance clears its class bound.
pub fn gen_case_video(label: Label, index: usize, spec: &SynthSpec) -> Vec<FrameImage> {
    if let Err(e) = spec.validate() {
        panic!("gen_case_video: {e}");
    }
    let tag = format!("case/{}/{index}", label.as_str());
    let base = mix_seed(spec.seed, tag.as_bytes());
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = Rng::new(mix_seed(base, format!("attempt{attempt}").as_bytes()));
        let frames = render_case(label, spec.frames_per_case, spec.image_side, &mut rng);
        let lv = frames.iter().map(mean_local_variance).sum::<f64>() / frames.len() as f64;
        let ok = match label {
            Label::Benign => lv <= BENIGN_MAX_LOCAL_VAR,
            Label::Malignant => lv >= MALIGNANT_MIN_LOCAL_VAR,
        };
        if ok {
            return frames;
        }
        log::debug!("{tag}: local variance {lv:.1} outside class bound, retrying");
    }
    panic!("{tag}: no attempt met the local-variance margin; generator constants are inconsistent")
}

/// Bright fan-shaped speckle sector on a dark background.
pub fn gen_noise_image(index: usize, spec: &SynthSpec) -> FrameImage {
    let mut rng = Rng::new(mix_seed(spec.seed, format!("noise/{index}").as_bytes()));
    let side = spec.image_side;
    let sidef = side as f64;
    let apex = (sidef * rng.uniform_range(0.3, 0.7), -sidef * rng.uniform_range(0.0, 0.2));
    let dir = PI / 2.0 + rng.uniform_range(-0.3, 0.3);
    let half = rng.uniform_range(0.35, 0.6);
    let reach = sidef * rng.uniform_range(1.1, 1.5);
    let speckle = CellNoise::new(&mut rng, side, 2);
    let level = rng.uniform_range(185.0, 220.0);
    let mut px = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 + 0.5 - apex.0, y as f64 + 0.5 - apex.1);
            let r = dx.hypot(dy);
            let mut off = dy.atan2(dx) - dir;
            off = (off + PI).rem_euclid(2.0 * PI) - PI;
            let v = if off.abs() < half && r < reach {
                level + 35.0 * speckle.at(x as f64, y as f64) - 40.0 * r / reach
            } else {
                20.0 + 8.0 * speckle.at(x as f64, y as f64)
            };
            px.push(clamp_u8(v));
        }
    }
    FrameImage::new(side, side, px)
}

pub fn case_id(label: Label, index: usize) -> String {
    format!("{}_{index:03}", label.as_str())
}

/// Writes `frames/<case>/frame_NNNN.pgm`, `noise/noise_NNN.pgm` and
/// `manifest.json` under `out_dir`.
pub fn write_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    spec.validate()?;
    let jobs: Vec<(Label, usize)> = Label::ALL
        .iter()
        .flat_map(|&l| (0..spec.cases_per_class).map(move |i| (l, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(label, i)| {
            let id = case_id(label, i);
            let dir = out_dir.join("frames").join(&id);
            std::fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
            for (t, f) in gen_case_video(label, i, spec).iter().enumerate() {
                write_pgm(f, &dir.join(format!("frame_{t:04}.pgm")))?;
            }
            Ok(ManifestEntry {
                case_id: id.clone(),
                label,
                frame_dir: format!("frames/{id}"),
                frame_pattern: "frame_*.pgm".into(),
                frame_period_s: spec.frame_period_s,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    let noise_dir = out_dir.join("noise");
    std::fs::create_dir_all(&noise_dir).map_err(|e| DataError::io(&noise_dir, e))?;
    (0..spec.noise_pool_size)
        .into_par_iter()
        .try_for_each(|i| write_pgm(&gen_noise_image(i, spec), &noise_dir.join(format!("noise_{i:03}.pgm"))))?;
    write_manifest(&out_dir.join("manifest.json"), &entries)?;
    Ok(entries)
}
