use super::TrainError;
use crate::augment::{clip_seed, make_views, TransformContext, TransformRegistry, ViewSpec};
use crate::dataio::{ClipSample, FrameImage};
use crate::model::{apply_bn_updates, Mode, Model};
use crate::numeric::{mix_seed, sgd_step, Element, Graph, Rng, SgdConfig, Tensor, Var};
use crate::swav::sinkhorn_codes;
use crate::swav::swapped_loss;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Optimizer and schedule settings. The contrastive weight lives in
/// [`crate::swav::SwavConfig::swav_weight`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Clips per step, before view expansion.
    pub batch_size: usize,
    pub seed: u64,
    pub flip_p: f64,
    pub cutmix_p: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            flip_p: 0.5,
            cutmix_p: 0.5,
            bn_momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        for (name, p) in [("flip_p", self.flip_p), ("cutmix_p", self.cutmix_p), ("bn_momentum", self.bn_momentum)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TrainError::Config(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        self.sgd().validate()?;
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub cls_loss: f64,
    /// `None` when the contrastive term is disabled.
    pub swav_loss: Option<f64>,
    pub total_loss: f64,
    pub batches: usize,
    pub clips_per_s: f64,
}

pub struct BatchLoss {
    pub total: Var,
    pub cls: Var,
    pub swav: Option<Var>,
}

/// `cls + λ·swav`; with `swav = None` the supervised loss alone.
pub fn total_loss<T: Element>(g: &mut Graph<T>, cls: Var, swav: Option<Var>, weight: f64) -> Result<Var, TrainError> {
    Ok(match swav {
        Some(s) => {
            let s = g.scale(s, weight);
            g.add(cls, s)?
        }
        None => cls,
    })
}

fn pixel<T: Element>(p: u8) -> T {
    T::from_f64((p as f64 / 255.0 - 0.5) / 0.25)
}

/// Stacks clips into `[N,1,T_slow,S,S]` and `[N,1,T_fast,S,S]` tensors.
/// Slow frames are every `slow_stride`-th fast frame.
pub fn clip_batch<T: Element>(clips: &[&[FrameImage]], slow_stride: usize) -> Result<(Tensor<T>, Tensor<T>), TrainError> {
    let first = clips
        .first()
        .and_then(|c| c.first())
        .ok_or_else(|| TrainError::Config("empty clip batch".into()))?;
    let (w, h) = (first.width, first.height);
    let tf = clips[0].len();
    let ts = tf.div_ceil(slow_stride);
    let mut fast = Vec::with_capacity(clips.len() * tf * w * h);
    let mut slow = Vec::with_capacity(clips.len() * ts * w * h);
    for c in clips {
        if c.len() != tf || c.iter().any(|f| f.width != w || f.height != h) {
            return Err(TrainError::Config("clips in a batch differ in length or frame size".into()));
        }
        for (i, f) in c.iter().enumerate() {
            let px = f.pixels.iter().map(|&p| pixel::<T>(p));
            if i % slow_stride == 0 {
                slow.extend(px.clone());
            }
            fast.extend(px);
        }
    }
    let n = clips.len();
    Ok((Tensor::new(&[n, 1, ts, h, w], slow)?, Tensor::new(&[n, 1, tf, h, w], fast)?))
}

/// Runs epochs of joint supervised + swapped-assignment training.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub views: ViewSpec,
    pub registry: TransformRegistry,
    pub ctx: TransformContext<'a>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, k_views: usize, ctx: TransformContext<'a>) -> Result<Self, TrainError> {
        cfg.validate()?;
        let cutmix_p = if ctx.noise_pool.is_some() { cfg.cutmix_p } else { 0.0 };
        Ok(Self {
            views: ViewSpec::standard(k_views, cfg.flip_p, cutmix_p, crate::augment::DEFAULT_RADIUS_RANGE),
            cfg,
            registry: TransformRegistry::default(),
            ctx,
        })
    }

    /// Builds the view-major graph for one batch and returns its losses.
    /// Rows are `[view0: clip0..clipB, view1: ...]`.
    pub fn batch_loss<T: Element>(
        &self,
        model: &Model<T>,
        g: &mut Graph<T>,
        clips: &[&ClipSample],
        epoch_seed: u64,
    ) -> Result<(BatchLoss, Vec<crate::model::BnUpdate<T>>), TrainError> {
        let per_clip: Vec<Vec<Vec<FrameImage>>> = clips
            .par_iter()
            .map(|c| {
                let seed = clip_seed(epoch_seed, &c.window.case_id, c.window.start);
                make_views(&c.frames, &self.views, &self.registry, &self.ctx, seed)
            })
            .collect::<Result<_, _>>()?;
        let k = self.views.k();
        let b = clips.len();
        let stride = clips[0].slow_stride;
        let ordered: Vec<&[FrameImage]> = (0..k)
            .flat_map(|v| per_clip.iter().map(move |views| views[v].as_slice()))
            .collect();
        let (slow, fast) = clip_batch::<T>(&ordered, stride)?;
        let (sv, fv) = (g.input(slow, false), g.input(fast, false));
        let out = model.forward(g, sv, fv, Mode::Train)?;
        let targets: Vec<f64> = (0..k).flat_map(|_| clips.iter().map(|c| c.label().target())).collect();
        let cls = g.bce_with_logits(out.net.logit, &targets)?;
        let sw = &model.head.cfg;
        let swav = if sw.swav_weight > 0.0 {
            let mut scores = Vec::with_capacity(k);
            let mut codes = Vec::with_capacity(k);
            for v in 0..k {
                let s = g.slice_rows(out.scores, v * b, b)?;
                codes.push(sinkhorn_codes(g.value(s), sw.epsilon, sw.sinkhorn_iters)?);
                scores.push(s);
            }
            Some(swapped_loss(g, &scores, &codes, sw.temperature)?)
        } else {
            None
        };
        let total = total_loss(g, cls, swav, sw.swav_weight)?;
        Ok((BatchLoss { total, cls, swav }, out.net.bn_updates))
    }

    /// One pass over `clips` in an order shuffled by `(seed, epoch)`.
    pub fn train_epoch<T: Element>(
        &self,
        model: &mut Model<T>,
        clips: &[ClipSample],
        epoch: usize,
    ) -> Result<EpochStats, TrainError> {
        if clips.is_empty() {
            return Err(TrainError::Config("no training clips".into()));
        }
        let started = Instant::now();
        let epoch_seed = mix_seed(self.cfg.seed, format!("epoch{epoch}").as_bytes());
        let mut order: Vec<usize> = (0..clips.len()).collect();
        Rng::new(epoch_seed).shuffle(&mut order);
        let sgd = self.cfg.sgd();
        let (mut cls_sum, mut swav_sum, mut total_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&ClipSample> = chunk.iter().map(|&i| &clips[i]).collect();
            let mut g = Graph::new();
            let (loss, updates) = self.batch_loss(model, &mut g, &batch, epoch_seed)?;
            let cls = g.value(loss.cls).data()[0].as_f64();
            let swav = loss.swav.map(|s| g.value(s).data()[0].as_f64());
            let total = g.value(loss.total).data()[0].as_f64();
            if !total.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    clips: batch.iter().map(|c| format!("{}@{}", c.window.case_id, c.window.start)).collect(),
                    cls,
                    swav,
                });
            }
            model.store.zero_grads();
            g.backward_into(loss.total, &mut model.store)?;
            drop(g);
            sgd_step(&mut model.store, &sgd)?;
            model.head.renormalize(&mut model.store)?;
            apply_bn_updates(&mut model.store, &updates, self.cfg.bn_momentum);
            cls_sum += cls;
            swav_sum += swav.unwrap_or(0.0);
            total_sum += total;
            batches += 1;
        }
        let n = batches as f64;
        let stats = EpochStats {
            epoch,
            cls_loss: cls_sum / n,
            swav_loss: (model.head.cfg.swav_weight > 0.0).then_some(swav_sum / n),
            total_loss: total_sum / n,
            batches,
            clips_per_s: clips.len() as f64 / started.elapsed().as_secs_f64().max(1e-9),
        };
        log::info!(
            "epoch {epoch}: cls {:.4} swav {:?} total {:.4} ({:.1} clips/s)",
            stats.cls_loss,
            stats.swav_loss,
            stats.total_loss,
            stats.clips_per_s
        );
        Ok(stats)
    }
}
