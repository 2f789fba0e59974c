//! Swapped-assignment clustering head: projection, prototype scores,
//! Sinkhorn-Knopp codes and the swapped-prediction loss.

use crate::numeric::{Element, Graph, ParamId, ParamStore, Rng, Tensor, TensorError, TensorResult, Var};
use serde::{Deserialize, Serialize};
use std::cell::Cell;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwavConfig {
    pub k_prototypes: usize,
    pub proj_dim: usize,
    /// Entropic regularizer.
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub temperature: f64,
    pub k_views: usize,
    pub swav_weight: f64,
}

impl Default for SwavConfig {
    fn default() -> Self {
        Self {
            k_prototypes: 16,
            proj_dim: 32,
            epsilon: 0.05,
            sinkhorn_iters: 3,
            temperature: 0.1,
            k_views: 2,
            swav_weight: 1.0,
        }
    }
}

impl SwavConfig {
    pub fn validate(&self) -> TensorResult<()> {
        let ok = self.k_prototypes > 0
            && self.proj_dim > 0
            && self.epsilon > 0.0
            && self.temperature > 0.0
            && self.k_views >= 2
            && self.swav_weight >= 0.0;
        if !ok {
            return Err(TensorError::Invalid {
                op: "swav",
                reason: format!("invalid configuration {self:?}"),
            });
        }
        Ok(())
    }
}

/// Nonnegative `[B, K]` soft assignment of samples to prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    pub q: Tensor<f64>,
}

impl CodeMatrix {
    pub fn batch(&self) -> usize {
        self.q.dims()[0]
    }

    pub fn prototypes(&self) -> usize {
        self.q.dims()[1]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.q.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let k = self.prototypes();
        let mut s = vec![0.0; k];
        for r in self.q.rows() {
            for (a, v) in s.iter_mut().zip(r) {
                *a += v;
            }
        }
        s
    }

    /// Rows rescaled to sum to one, as cross-entropy targets.
    pub fn targets<T: Element>(&self) -> Tensor<T> {
        let k = self.prototypes();
        let mut data = Vec::with_capacity(self.q.len());
        for r in self.q.rows() {
            let s: f64 = r.iter().sum();
            data.extend(r.iter().map(|v| T::from_f64(v / s)));
        }
        Tensor::new(&[self.batch(), k], data).expect("code dims")
    }
}

thread_local! {
    static SINKHORN_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`sinkhorn_codes`] invocations on the current thread.
pub fn sinkhorn_call_count() -> usize {
    SINKHORN_CALLS.with(|c| c.get())
}

/// Equipartitioned codes: `Q ∝ exp(s/ε)`, then alternating column
/// (→ 1/K) and row (→ 1/B) normalization. The last pass is always a row
/// pass, so row sums are exact. Takes plain values; no gradient flows.
pub fn sinkhorn_codes<T: Element>(scores: &Tensor<T>, epsilon: f64, iters: usize) -> TensorResult<CodeMatrix> {
    SINKHORN_CALLS.with(|c| c.set(c.get() + 1));
    scores.expect_rank("sinkhorn_codes", 2)?;
    let (b, k) = (scores.dims()[0], scores.dims()[1]);
    if b == 0 || k == 0 {
        return Err(TensorError::Invalid {
            op: "sinkhorn_codes",
            reason: format!("empty score matrix {:?}", scores.dims()),
        });
    }
    if !(epsilon > 0.0) {
        return Err(TensorError::Invalid {
            op: "sinkhorn_codes",
            reason: format!("epsilon must be positive, got {epsilon}"),
        });
    }
    if let Some(index) = scores.data().iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "sinkhorn_codes", index });
    }
    let s: Vec<f64> = scores.data().iter().map(|v| v.as_f64()).collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = s.iter().map(|v| ((v - max) / epsilon).exp()).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);

    let (bf, kf) = (b as f64, k as f64);
    let normalize_rows = |q: &mut [f64]| {
        for row in q.chunks_mut(k) {
            let rs: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= rs * bf);
        }
    };
    for _ in 0..iters {
        let mut cs = vec![0.0; k];
        for row in q.chunks(k) {
            for (a, v) in cs.iter_mut().zip(row) {
                *a += v;
            }
        }
        for row in q.chunks_mut(k) {
            for (v, c) in row.iter_mut().zip(&cs) {
                *v /= c * kf;
            }
        }
        normalize_rows(&mut q);
    }
    if iters == 0 {
        normalize_rows(&mut q);
    }
    Ok(CodeMatrix {
        q: Tensor::new(&[b, k], q)?,
    })
}

/// Bias-free linear map followed by row L2 normalization.
pub fn project<T: Element>(g: &mut Graph<T>, embedding: Var, weight: Var) -> TensorResult<Var> {
    let h = g.matmul_nt(embedding, weight)?;
    g.l2_normalize(h, 1e-12)
}

/// Cosine similarities `z · cᵀ` between unit projections and unit prototypes.
pub fn prototype_scores<T: Element>(g: &mut Graph<T>, z: Var, bank: Var) -> TensorResult<Var> {
    g.matmul_nt(z, bank)
}

/// Mean over ordered view pairs `(a, b)`, `a ≠ b`, of the cross-entropy
/// between view `a`'s codes and view `b`'s tempered prototype scores.
pub fn swapped_loss<T: Element>(
    g: &mut Graph<T>,
    scores: &[Var],
    codes: &[CodeMatrix],
    temperature: f64,
) -> TensorResult<Var> {
    if scores.len() < 2 || scores.len() != codes.len() {
        return Err(TensorError::Invalid {
            op: "swapped_loss",
            reason: format!("need matching score/code lists of at least 2 views, got {} and {}", scores.len(), codes.len()),
        });
    }
    let targets: Vec<Tensor<T>> = codes.iter().map(|c| c.targets()).collect();
    let mut total: Option<Var> = None;
    let mut pairs = 0usize;
    for (a, target) in targets.iter().enumerate() {
        for (b, &s) in scores.iter().enumerate() {
            if a == b {
                continue;
            }
            let term = g.cross_entropy_soft(s, target.clone(), temperature)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
            pairs += 1;
        }
    }
    let total = total.expect("at least two views");
    Ok(g.scale(total, 1.0 / pairs as f64))
}

/// Divides each prototype by its L2 norm. Rows already of unit norm to
/// within a few ulps are left bitwise untouched.
pub fn renormalize_prototypes<T: Element>(bank: &mut Tensor<T>) -> TensorResult<()> {
    bank.expect_rank("renormalize_prototypes", 2)?;
    let d = bank.dims()[1];
    let unit_tol = 8.0 * T::epsilon().as_f64();
    for (r, row) in bank.data_mut().chunks_mut(d).enumerate() {
        let n = row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        if (n - 1.0).abs() <= unit_tol {
            continue;
        }
        if !(n > 0.0) {
            return Err(TensorError::ZeroNorm {
                op: "renormalize_prototypes",
                row: r,
                eps: 0.0,
            });
        }
        row.iter_mut().for_each(|v| *v = T::from_f64(v.as_f64() / n));
    }
    Ok(())
}

/// Parameters of the clustering head inside a model's store.
#[derive(Debug, Clone)]
pub struct SwavHead {
    pub cfg: SwavConfig,
    pub projection: ParamId,
    pub prototypes: ParamId,
}

pub const PROJECTION_NAME: &str = "swav.projection.weight";
pub const PROTOTYPES_NAME: &str = "swav.prototypes";

pub struct HeadOutput {
    /// `[N, proj_dim]` unit rows.
    pub z: Var,
    /// `[N, k_prototypes]` cosine scores.
    pub scores: Var,
}

impl SwavHead {
    pub fn register<T: Element>(cfg: &SwavConfig, embed_dim: usize, store: &mut ParamStore<T>, rng: &mut Rng) -> TensorResult<Self> {
        cfg.validate()?;
        let bound = (6.0 / embed_dim as f64).sqrt();
        let w: Vec<T> = (0..cfg.proj_dim * embed_dim)
            .map(|_| T::from_f64(rng.uniform_range(-bound, bound)))
            .collect();
        let projection = store.add(PROJECTION_NAME, Tensor::new(&[cfg.proj_dim, embed_dim], w)?)?;
        let c: Vec<T> = (0..cfg.k_prototypes * cfg.proj_dim).map(|_| T::from_f64(rng.normal())).collect();
        let mut bank = Tensor::new(&[cfg.k_prototypes, cfg.proj_dim], c)?;
        renormalize_prototypes(&mut bank)?;
        let prototypes = store.add(PROTOTYPES_NAME, bank)?;
        Ok(Self {
            cfg: cfg.clone(),
            projection,
            prototypes,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, embedding: Var) -> TensorResult<HeadOutput> {
        let w = g.param(store, self.projection);
        let z = project(g, embedding, w)?;
        let bank = g.param(store, self.prototypes);
        let scores = prototype_scores(g, z, bank)?;
        Ok(HeadOutput { z, scores })
    }

    pub fn renormalize<T: Element>(&self, store: &mut ParamStore<T>) -> TensorResult<()> {
        renormalize_prototypes(&mut store.get_mut(self.prototypes).value)
    }
}
