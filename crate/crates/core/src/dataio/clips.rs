use super::{CaseRecord, DataError, FrameImage, Label};
use serde::{Deserialize, Serialize};

/// Dual-rate sampling: one fast timeline, the slow stream is every
/// `slow_stride`-th fast frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub fast_period_s: f64,
    pub slow_stride: usize,
    pub clip_fast_len: usize,
    pub clip_slow_len: usize,
    pub overlap_fraction: f64,
    pub crop_side: usize,
    pub out_side: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            fast_period_s: 0.1,
            slow_stride: 4,
            clip_fast_len: 32,
            clip_slow_len: 8,
            overlap_fraction: 0.5,
            crop_side: 960,
            out_side: 224,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Sampling(m));
        if self.clip_fast_len != self.slow_stride * self.clip_slow_len {
            return err(format!(
                "clip_fast_len {} must equal slow_stride {} x clip_slow_len {}",
                self.clip_fast_len, self.slow_stride, self.clip_slow_len
            ));
        }
        if !(self.fast_period_s > 0.0) || self.clip_slow_len == 0 || self.slow_stride == 0 {
            return err("periods and lengths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return err(format!("overlap_fraction {} outside [0,1)", self.overlap_fraction));
        }
        if self.out_side == 0 || self.crop_side < self.out_side {
            return err(format!(
                "crop_side {} must be at least out_side {}",
                self.crop_side, self.out_side
            ));
        }
        Ok(())
    }

    /// Fast-timeline frames between consecutive window starts.
    pub fn window_stride(&self) -> usize {
        ((self.clip_fast_len as f64 * (1.0 - self.overlap_fraction)).round() as usize).max(1)
    }

    pub fn clip_duration_s(&self) -> f64 {
        self.clip_fast_len as f64 * self.fast_period_s
    }

    pub fn slow_period_s(&self) -> f64 {
        self.fast_period_s * self.slow_stride as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipWindow {
    pub case_id: String,
    pub label: Label,
    /// First fast-timeline index of the window.
    pub start: usize,
    /// Fast-timeline indices, `fast_period_s` apart.
    pub fast_indices: Vec<usize>,
    /// `fast_indices[0], fast_indices[stride], ...`
    pub slow_indices: Vec<usize>,
    /// Stored frame shown at each fast index (nearest-frame resampling).
    pub fast_frames: Vec<usize>,
    pub slow_frames: Vec<usize>,
}

impl ClipWindow {
    pub fn id(&self) -> (String, usize) {
        (self.case_id.clone(), self.start)
    }
}

/// A clip window together with its preprocessed fast-rate frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub window: ClipWindow,
    /// One frame per fast index.
    pub frames: Vec<FrameImage>,
    pub slow_stride: usize,
}

impl ClipSample {
    /// Builds every clip of a case from its decoded, preprocessed frames.
    pub fn assemble(case: &CaseRecord, frames: &[FrameImage], cfg: &SamplingConfig) -> Vec<ClipSample> {
        enumerate_clips(case, cfg)
            .into_iter()
            .map(|window| ClipSample {
                frames: window.fast_frames.iter().map(|&i| frames[i].clone()).collect(),
                window,
                slow_stride: cfg.slow_stride,
            })
            .collect()
    }

    /// Slow-pathway frames: every `slow_stride`-th fast frame.
    pub fn slow_frames(&self) -> impl Iterator<Item = &FrameImage> {
        self.frames.iter().step_by(self.slow_stride)
    }

    pub fn label(&self) -> Label {
        self.window.label
    }
}

/// Length of the fast timeline covered by `n_stored` frames `period_s` apart.
fn timeline_len(n_stored: usize, period_s: f64, fast_s: f64) -> usize {
    if n_stored == 0 {
        return 0;
    }
    if (period_s - fast_s).abs() < 1e-12 {
        return n_stored;
    }
    let duration = (n_stored - 1) as f64 * period_s;
    (duration / fast_s + 1e-9).floor() as usize + 1
}

fn stored_frame(fast_index: usize, n_stored: usize, period_s: f64, fast_s: f64) -> usize {
    let t = fast_index as f64 * fast_s;
    ((t / period_s).round() as usize).min(n_stored - 1)
}

/// Windows of `clip_fast_len` fast frames, advancing by the overlap stride,
/// fully inside the stream.
pub fn enumerate_clips(case: &CaseRecord, cfg: &SamplingConfig) -> Vec<ClipWindow> {
    let n = case.frame_paths.len();
    let len = timeline_len(n, case.frame_period_s, cfg.fast_period_s);
    let stride = cfg.window_stride();
    let mut out = Vec::new();
    let mut start = 0;
    while start + cfg.clip_fast_len <= len {
        let fast_indices: Vec<usize> = (start..start + cfg.clip_fast_len).collect();
        let slow_indices: Vec<usize> = fast_indices.iter().copied().step_by(cfg.slow_stride).collect();
        let map = |i: &usize| stored_frame(*i, n, case.frame_period_s, cfg.fast_period_s);
        out.push(ClipWindow {
            case_id: case.case_id.clone(),
            label: case.label,
            start,
            fast_frames: fast_indices.iter().map(map).collect(),
            slow_frames: slow_indices.iter().map(map).collect(),
            fast_indices,
            slow_indices,
        });
        start += stride;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn case(n: usize, period: f64) -> CaseRecord {
        CaseRecord {
            case_id: "c".into(),
            label: Label::Benign,
            frame_paths: (0..n).map(|i| PathBuf::from(format!("{i}.pgm"))).collect(),
            frame_period_s: period,
        }
    }

    #[test]
    fn paper_sampling_invariants() {
        let cfg = SamplingConfig::default();
        cfg.validate().unwrap();
        assert!((cfg.slow_period_s() - 0.4).abs() < 1e-12);
        assert!((cfg.clip_duration_s() - 3.2).abs() < 1e-12);
        assert_eq!(cfg.window_stride(), 16);
    }

    #[test]
    fn ninety_six_frames_give_five_clips() {
        let clips = enumerate_clips(&case(96, 0.1), &SamplingConfig::default());
        let starts: Vec<_> = clips.iter().map(|c| c.start).collect();
        assert_eq!(starts, [0, 16, 32, 48, 64]);
    }

    #[test]
    fn exactly_one_window() {
        let clips = enumerate_clips(&case(32, 0.1), &SamplingConfig::default());
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].fast_indices, (0..32).collect::<Vec<_>>());
        assert_eq!(clips[0].slow_indices, (0..32).step_by(4).collect::<Vec<_>>());
        assert!(enumerate_clips(&case(31, 0.1), &SamplingConfig::default()).is_empty());
    }

    #[test]
    fn adjacent_clips_are_one_point_six_seconds_apart() {
        let cfg = SamplingConfig::default();
        let clips = enumerate_clips(&case(96, 0.1), &cfg);
        for w in clips.windows(2) {
            let dt = (w[1].start - w[0].start) as f64 * cfg.fast_period_s;
            assert!((dt - 1.6).abs() < 1e-12);
            let shared = w[0].fast_indices.iter().filter(|i| w[1].fast_indices.contains(i)).count();
            assert!((shared as f64 * cfg.fast_period_s - 1.6).abs() < 1e-12);
        }
    }

    #[test]
    fn coarser_storage_resamples_to_nearest_frame() {
        // 0.2 s storage: 17 frames span 3.2 s = 33 fast frames.
        let clips = enumerate_clips(&case(17, 0.2), &SamplingConfig::default());
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].fast_frames[..4], [0, 1, 1, 2]);
        assert_eq!(clips[0].slow_frames[..3], [0, 2, 4]);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SamplingConfig {
            clip_slow_len: 7,
            ..SamplingConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
