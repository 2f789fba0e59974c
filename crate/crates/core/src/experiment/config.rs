use super::ExperimentError;
use crate::dataio::SamplingConfig;
use crate::model::SlowFastConfig;
use crate::swav::SwavConfig;
use crate::synth::SynthSpec;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Paper,
}

/// Flat run configuration. Every key can be overridden on the command line
/// with `--key=value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: String,
    pub preset: Preset,
    pub seed: u64,
    pub deterministic: bool,

    pub cases_per_class: usize,
    pub frames_per_case: usize,
    pub image_side: usize,
    pub noise_pool_size: usize,

    pub frame_period_s: f64,
    pub clip_fast_len: usize,
    pub slow_stride: usize,
    pub overlap_fraction: f64,
    pub crop_side: usize,
    pub out_side: usize,
    pub split_ratio: f64,

    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub flip_p: f64,
    pub cutmix_p: f64,
    pub bn_momentum: f64,

    pub k_prototypes: usize,
    pub proj_dim: usize,
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub temperature: f64,
    pub k_views: usize,
    pub swav_weight: f64,

    pub noise_eval_fraction: f64,
    pub gradcheck_cases: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SwavConfig::default();
        Self {
            data_dir: "data".into(),
            out_dir: "runs".into(),
            model: "slowfast_swav".into(),
            preset: Preset::Tiny,
            seed: 0,
            deterministic: false,
            cases_per_class: 30,
            frames_per_case: 40,
            image_side: 160,
            noise_pool_size: 237,
            frame_period_s: 0.1,
            clip_fast_len: 16,
            slow_stride: 4,
            overlap_fraction: 0.5,
            crop_side: 128,
            out_side: 64,
            split_ratio: 2.0 / 3.0,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            flip_p: t.flip_p,
            cutmix_p: t.cutmix_p,
            bn_momentum: t.bn_momentum,
            k_prototypes: s.k_prototypes,
            proj_dim: s.proj_dim,
            epsilon: s.epsilon,
            sinkhorn_iters: s.sinkhorn_iters,
            temperature: s.temperature,
            k_views: s.k_views,
            swav_weight: s.swav_weight,
            noise_eval_fraction: 0.5,
            gradcheck_cases: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            cases_per_class: self.cases_per_class,
            frames_per_case: self.frames_per_case,
            image_side: self.image_side,
            frame_period_s: self.frame_period_s,
            seed: self.seed,
            noise_pool_size: self.noise_pool_size,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            fast_period_s: self.frame_period_s,
            slow_stride: self.slow_stride,
            clip_fast_len: self.clip_fast_len,
            clip_slow_len: self.clip_fast_len / self.slow_stride.max(1),
            overlap_fraction: self.overlap_fraction,
            crop_side: self.crop_side,
            out_side: self.out_side,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            flip_p: self.flip_p,
            cutmix_p: self.cutmix_p,
            bn_momentum: self.bn_momentum,
        }
    }

    pub fn swav(&self) -> SwavConfig {
        SwavConfig {
            k_prototypes: self.k_prototypes,
            proj_dim: self.proj_dim,
            epsilon: self.epsilon,
            sinkhorn_iters: self.sinkhorn_iters,
            temperature: self.temperature,
            k_views: self.k_views,
            swav_weight: self.swav_weight,
        }
    }

    /// Network dimensions for the preset, with clip length and frame size
    /// taken from the sampling keys.
    pub fn network(&self) -> SlowFastConfig {
        let base = match self.preset {
            Preset::Tiny => SlowFastConfig::tiny(),
            Preset::Paper => SlowFastConfig::paper(),
        };
        SlowFastConfig {
            alpha: self.slow_stride,
            slow_frames: self.sampling().clip_slow_len,
            side: self.out_side,
            ..base
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.ebds", self.model))
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.sampling().validate()?;
        self.synth_spec().validate()?;
        self.train().validate()?;
        self.swav().validate()?;
        if !(0.0..=1.0).contains(&self.noise_eval_fraction) {
            return Err(ExperimentError::Config(format!(
                "noise_eval_fraction {} outside [0,1]",
                self.noise_eval_fraction
            )));
        }
        Ok(())
    }
}

/// Applies `key=value` overrides. Values are parsed as JSON when possible
/// and as bare strings otherwise; unknown keys are rejected.
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[(String, String)]) -> Result<ExperimentConfig, ExperimentError> {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    let map = value.as_object_mut().expect("config is an object");
    for (key, raw) in overrides {
        let slot = map.get_mut(key).ok_or_else(|| ExperimentError::UnknownKey(key.clone()))?;
        *slot = match (&*slot, serde_json::from_str::<Value>(raw)) {
            (Value::String(_), _) => Value::String(raw.clone()),
            (_, Ok(v)) => v,
            (_, Err(_)) => Value::String(raw.clone()),
        };
    }
    serde_json::from_value(value).map_err(|e| ExperimentError::Config(format!("override: {e}")))
}
