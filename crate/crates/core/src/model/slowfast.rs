//! Slow and fast 3D ResNet pathways with additive lateral fusion.

use super::{ModelError, SlowFastConfig};
use crate::numeric::{BnMode, ChannelStats, Element, Graph, ParamId, ParamStore, Rng, Tensor, TensorError, Var};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct ConvBn {
    weight: ParamId,
    scale: ParamId,
    shift: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    stride: [usize; 3],
    pad: [usize; 3],
}

#[derive(Debug, Clone)]
struct Bottleneck {
    a: ConvBn,
    b: ConvBn,
    c: ConvBn,
    shortcut: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct Pathway {
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Fusion {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Batch statistics to fold into running buffers after a train step.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: ChannelStats<T>,
}

/// Feature-map dims at one fusion point.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: &'static str,
    pub slow: Vec<usize>,
    pub fast: Option<Vec<usize>>,
}

pub struct ForwardOutput<T> {
    /// `[N, 1]` malignancy logit.
    pub logit: Var,
    /// `[N, embed_dim]` pooled, concatenated pathway features.
    pub embedding: Var,
    pub bn_updates: Vec<BnUpdate<T>>,
    pub trace: Vec<StageTrace>,
}

pub const STAGE_NAMES: [&str; 5] = ["stem", "res2", "res3", "res4", "res5"];

/// Temporal kernel of each stage's first bottleneck conv.
const SLOW_TEMPORAL: [usize; 4] = [1, 1, 3, 3];
const FAST_TEMPORAL: [usize; 4] = [3, 3, 3, 3];

fn he_uniform<T: Element>(dims: &[usize], rng: &mut Rng) -> Tensor<T> {
    let fan_in: usize = dims[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| T::from_f64(rng.uniform_range(-bound, bound))).collect())
        .expect("init dims")
}

struct Builder<'a, T: Element> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut Rng,
}

impl<T: Element> Builder<'_, T> {
    fn conv_bn(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: [usize; 3],
        stride: [usize; 3],
    ) -> Result<ConvBn, ModelError> {
        let s = &mut *self.store;
        let weight = s.add(&format!("{name}.weight"), he_uniform(&[cout, cin, k[0], k[1], k[2]], self.rng))?;
        Ok(ConvBn {
            weight,
            scale: s.add(&format!("{name}.bn.scale"), Tensor::full(&[cout], T::one()))?,
            shift: s.add(&format!("{name}.bn.shift"), Tensor::zeros(&[cout]))?,
            running_mean: s.add_buffer(&format!("{name}.bn.running_mean"), Tensor::zeros(&[cout]))?,
            running_var: s.add_buffer(&format!("{name}.bn.running_var"), Tensor::full(&[cout], T::one()))?,
            stride,
            pad: [k[0] / 2, k[1] / 2, k[2] / 2],
        })
    }

    fn pathway(&mut self, prefix: &str, cfg: &SlowFastConfig, base: usize, stem_t: usize, temporal: [usize; 4]) -> Result<Pathway, ModelError> {
        let stem = self.conv_bn(&format!("{prefix}.stem"), 1, base, [stem_t, 7, 7], [1, 2, 2])?;
        let mut cin = base;
        let mut stages = Vec::new();
        for (i, &blocks) in cfg.stage_blocks.iter().enumerate() {
            let width = SlowFastConfig::stage_width(base, i);
            let cout = SlowFastConfig::stage_out(base, i);
            let mut stage = Vec::new();
            for j in 0..blocks {
                let s = if i > 0 && j == 0 { 2 } else { 1 };
                let name = format!("{prefix}.res{}.{}", i + 2, j);
                let shortcut = if cin != cout || s != 1 {
                    Some(self.conv_bn(&format!("{name}.shortcut"), cin, cout, [1, 1, 1], [1, s, s])?)
                } else {
                    None
                };
                stage.push(Bottleneck {
                    a: self.conv_bn(&format!("{name}.a"), cin, width, [temporal[i], 1, 1], [1, 1, 1])?,
                    b: self.conv_bn(&format!("{name}.b"), width, width, [1, 3, 3], [1, s, s])?,
                    c: self.conv_bn(&format!("{name}.c"), width, cout, [1, 1, 1], [1, 1, 1])?,
                    shortcut,
                });
                cin = cout;
            }
            stages.push(stage);
        }
        Ok(Pathway { stem, stages })
    }
}

/// Parameter layout and forward pass of the dual-pathway network.
#[derive(Debug, Clone)]
pub struct SlowFast {
    cfg: SlowFastConfig,
    slow: Pathway,
    fast: Option<Pathway>,
    fusions: Vec<Fusion>,
    head_weight: ParamId,
    head_bias: ParamId,
}

struct Ctx<'a, T: Element> {
    g: &'a mut Graph<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    updates: Vec<BnUpdate<T>>,
}

impl<T: Element> Ctx<'_, T> {
    fn conv_bn(&mut self, x: Var, l: &ConvBn, relu: bool) -> Result<Var, TensorError> {
        let w = self.g.param(self.store, l.weight);
        let y = self.g.conv3d(x, w, None, l.stride, l.pad)?;
        let scale = self.g.param(self.store, l.scale);
        let shift = self.g.param(self.store, l.shift);
        let mode = match self.mode {
            Mode::Train => BnMode::Train,
            Mode::Eval => BnMode::Eval {
                mean: self.store.value(l.running_mean).data(),
                var: self.store.value(l.running_var).data(),
            },
        };
        let (y, stats) = self.g.batch_norm3d(y, scale, shift, mode, BN_EPS)?;
        if let Some(stats) = stats {
            self.updates.push(BnUpdate {
                running_mean: l.running_mean,
                running_var: l.running_var,
                stats,
            });
        }
        Ok(if relu { self.g.relu(y) } else { y })
    }

    fn bottleneck(&mut self, x: Var, b: &Bottleneck) -> Result<Var, TensorError> {
        let h = self.conv_bn(x, &b.a, true)?;
        let h = self.conv_bn(h, &b.b, true)?;
        let h = self.conv_bn(h, &b.c, false)?;
        let skip = match &b.shortcut {
            Some(s) => self.conv_bn(x, s, false)?,
            None => x,
        };
        let y = self.g.add(h, skip)?;
        Ok(self.g.relu(y))
    }

    fn stem(&mut self, x: Var, p: &Pathway) -> Result<Var, TensorError> {
        let h = self.conv_bn(x, &p.stem, true)?;
        self.g.pool3d(h, crate::numeric::PoolMode::Max, [1, 3, 3], [1, 2, 2], [0, 1, 1])
    }
}

/// Adds a temporally strided convolution of fast features to slow features.
pub fn lateral_fuse<T: Element>(
    g: &mut Graph<T>,
    fast: Var,
    slow: Var,
    weight: Var,
    bias: Var,
    alpha: usize,
) -> Result<Var, ModelError> {
    let (fd, sd) = (g.dims(fast).to_vec(), g.dims(slow).to_vec());
    if fd.len() != 5 || sd.len() != 5 {
        return Err(ModelError::Shape(format!("fusion expects rank-5 inputs, got {fd:?} and {sd:?}")));
    }
    if fd[2] != alpha * sd[2] {
        return Err(ModelError::Shape(format!(
            "fast temporal extent {} is not alpha={alpha} x slow extent {}",
            fd[2], sd[2]
        )));
    }
    if fd[0] != sd[0] || fd[3..] != sd[3..] {
        return Err(ModelError::Shape(format!("fusion batch/spatial mismatch: fast {fd:?}, slow {sd:?}")));
    }
    let kt = g.dims(weight)[2];
    let fused = g.conv3d(fast, weight, Some(bias), [alpha, 1, 1], [kt / 2, 0, 0])?;
    Ok(g.add(slow, fused)?)
}

impl SlowFast {
    /// Registers all network parameters in `store`.
    pub fn register<T: Element>(cfg: &SlowFastConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut b = Builder { store, rng };
        let slow = b.pathway("slow", cfg, cfg.base_channels, 1, SLOW_TEMPORAL)?;
        let mut fusions = Vec::new();
        let fast = if cfg.single_pathway {
            None
        } else {
            let fb = cfg.fast_base();
            let fast = b.pathway("fast", cfg, fb, 5, FAST_TEMPORAL)?;
            let mut pairs = vec![(fb, cfg.base_channels)];
            pairs.extend((0..4).map(|i| (SlowFastConfig::stage_out(fb, i), SlowFastConfig::stage_out(cfg.base_channels, i))));
            for (i, (cf, cs)) in pairs.into_iter().enumerate() {
                let name = format!("fuse.{}", STAGE_NAMES[i]);
                let weight = b.store.add(&format!("{name}.weight"), he_uniform(&[cs, cf, cfg.fusion_kernel_t, 1, 1], b.rng))?;
                let bias = b.store.add(&format!("{name}.bias"), Tensor::zeros(&[cs]))?;
                fusions.push(Fusion { weight, bias });
            }
            Some(fast)
        };
        let e = cfg.embed_dim();
        let head_weight = b.store.add("head.weight", he_uniform(&[1, e], b.rng))?;
        let head_bias = b.store.add("head.bias", Tensor::zeros(&[1]))?;
        Ok(Self {
            cfg: cfg.clone(),
            slow,
            fast,
            fusions,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &SlowFastConfig {
        &self.cfg
    }

    pub fn fusions(&self) -> &[Fusion] {
        &self.fusions
    }

    /// Full dual-stream pass: stem, four residual stages, lateral fusion after
    /// the stem and each stage, global pooling, heads.
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        slow_clip: Var,
        fast_clip: Var,
        mode: Mode,
    ) -> Result<ForwardOutput<T>, ModelError> {
        let (sd, fd) = (g.dims(slow_clip).to_vec(), g.dims(fast_clip).to_vec());
        if sd.len() != 5 || fd.len() != 5 || sd[1] != 1 || fd[1] != 1 {
            return Err(ModelError::Shape(format!(
                "expected single-channel [N,1,T,S,S] clips, got slow {sd:?} fast {fd:?}"
            )));
        }
        if fd[2] != self.cfg.alpha * sd[2] {
            return Err(ModelError::Shape(format!(
                "fast clip has {} frames, expected alpha={} x {}",
                fd[2], self.cfg.alpha, sd[2]
            )));
        }
        if sd[0] != fd[0] || sd[3..] != fd[3..] {
            return Err(ModelError::Shape(format!("slow {sd:?} and fast {fd:?} clips disagree")));
        }
        let mut cx = Ctx {
            g,
            store,
            mode,
            updates: Vec::new(),
        };
        let mut trace = Vec::new();
        let mut s = cx.stem(slow_clip, &self.slow)?;
        let mut f = match &self.fast {
            Some(p) => Some(cx.stem(fast_clip, p)?),
            None => None,
        };
        for level in 0..5 {
            if level > 0 {
                for blk in &self.slow.stages[level - 1] {
                    s = cx.bottleneck(s, blk)?;
                }
                if let (Some(p), Some(fv)) = (&self.fast, f.as_mut()) {
                    for blk in &p.stages[level - 1] {
                        *fv = cx.bottleneck(*fv, blk)?;
                    }
                }
            }
            trace.push(StageTrace {
                stage: STAGE_NAMES[level],
                slow: cx.g.dims(s).to_vec(),
                fast: f.map(|fv| cx.g.dims(fv).to_vec()),
            });
            if let Some(fv) = f {
                let fu = self.fusions[level];
                let w = cx.g.param(store, fu.weight);
                let b = cx.g.param(store, fu.bias);
                s = lateral_fuse(cx.g, fv, s, w, b, self.cfg.alpha)?;
            }
        }
        let mut pooled = vec![cx.g.global_avg_pool(s)?];
        if let Some(fv) = f {
            pooled.push(cx.g.global_avg_pool(fv)?);
        }
        let embedding = if pooled.len() == 1 {
            pooled[0]
        } else {
            cx.g.concat_cols(&pooled)?
        };
        let hw = cx.g.param(store, self.head_weight);
        let hb = cx.g.param(store, self.head_bias);
        let logit = cx.g.affine(embedding, hw, Some(hb))?;
        Ok(ForwardOutput {
            logit,
            embedding,
            bn_updates: cx.updates,
            trace,
        })
    }
}

/// `running ← m·running + (1−m)·batch` for every recorded batch norm.
pub fn apply_bn_updates<T: Element>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>], momentum: f64) {
    let m = T::from_f64(momentum);
    let one_m = T::one() - m;
    for u in updates {
        for (id, batch) in [(u.running_mean, &u.stats.mean), (u.running_var, &u.stats.var)] {
            let p = store.get_mut(id);
            for (r, &b) in p.value.data_mut().iter_mut().zip(batch) {
                *r = m * *r + one_m * b;
            }
        }
    }
}

/// Logistic probability of malignancy.
pub fn classify_prob(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}
