use super::{read_pgm, CaseRecord, DataError, FrameImage, SamplingConfig};
use rayon::prelude::*;

/// `(row, col)` offsets of a centered `side`×`side` crop.
pub fn center_crop_offsets(rows: usize, cols: usize, side: usize) -> (usize, usize) {
    (rows.saturating_sub(side) / 2, cols.saturating_sub(side) / 2)
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Reflect-pads to at least `side` on each axis, keeping the content centered.
fn pad_to(frame: &FrameImage, side: usize) -> FrameImage {
    if frame.width >= side && frame.height >= side {
        return frame.clone();
    }
    let (w, h) = (frame.width.max(side), frame.height.max(side));
    let (ox, oy) = ((w - frame.width) / 2, (h - frame.height) / 2);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = reflect(y as isize - oy as isize, frame.height);
        for x in 0..w {
            let sx = reflect(x as isize - ox as isize, frame.width);
            pixels.push(frame.get(sx, sy));
        }
    }
    FrameImage::new(w, h, pixels)
}

/// For each output cell, the input indices it overlaps and the overlap lengths.
fn area_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = lo + scale;
            let mut cells = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi - 1e-12 && i < input {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((i, overlap));
                }
                i += 1;
            }
            cells
        })
        .collect()
}

/// Center crop to `crop_side`², then area-average down to `out_side`².
pub fn crop_resize(frame: &FrameImage, cfg: &SamplingConfig) -> FrameImage {
    let padded = pad_to(frame, cfg.crop_side);
    let (oy, ox) = center_crop_offsets(padded.height, padded.width, cfg.crop_side);
    let side = cfg.crop_side;
    let out = cfg.out_side;
    let weights = area_weights(side, out);
    let norm = (side as f64 / out as f64).powi(2);
    let mut pixels = Vec::with_capacity(out * out);
    for wy in &weights {
        for wx in &weights {
            let mut acc = 0.0;
            for &(iy, fy) in wy {
                let row = (oy + iy) * padded.width + ox;
                for &(ix, fx) in wx {
                    acc += fy * fx * padded.pixels[row + ix] as f64;
                }
            }
            pixels.push((acc / norm).round().clamp(0.0, 255.0) as u8);
        }
    }
    FrameImage::new(out, out, pixels)
}

/// Decodes and preprocesses every stored frame of a case.
pub fn load_case_frames(case: &CaseRecord, cfg: &SamplingConfig) -> Result<Vec<FrameImage>, DataError> {
    case.frame_paths
        .par_iter()
        .map(|p| read_pgm(p).map(|f| crop_resize(&f, cfg)))
        .collect()
}
