//! Reverse-mode tape.
//!
//! Every operation appends a node whose inputs already exist, so the node
//! vector is a topological order and backward is a single reverse sweep.

use super::conv::{self, ConvShape};
use super::element::{matmul, matmul_nt, matmul_tn, Element};
use super::param::{ParamId, ParamStore};
use super::pool::{self, PoolMode, PoolShape};
use super::tensor::{Tensor, TensorError, TensorResult};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel batch statistics produced by a train-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    Train,
    Eval { mean: &'a [T], var: &'a [T] },
}

enum Op<T: Element> {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        shape: ConvShape,
    },
    Pool {
        x: Var,
        shape: PoolShape,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    GlobalAvg {
        x: Var,
    },
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
    Softmax {
        x: Var,
        tau: T,
    },
    SoftCrossEntropy {
        logits: Var,
        target: Tensor<T>,
        tau: T,
        probs: Vec<T>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<T>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. With recording disabled the graph still holds
/// forward values but keeps no gradient bookkeeping.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn rows_cols<T: Element>(op: &'static str, t: &Tensor<T>) -> TensorResult<(usize, usize)> {
    t.expect_rank(op, 2)?;
    Ok((t.dims()[0], t.dims()[1]))
}

fn same_dims(op: &'static str, a: &[usize], b: &[usize]) -> TensorResult<()> {
    if a != b {
        return Err(TensorError::Invalid {
            op,
            reason: format!("dims {a:?} and {b:?} differ"),
        });
    }
    Ok(())
}

/// Numerically stable row softmax of `x / tau`.
pub(crate) fn softmax_rows<T: Element>(x: &[T], cols: usize, tau: T) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let e: Vec<T> = row.iter().map(|&v| ((v - m) / tau).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    /// A recording graph.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph that evaluates values only.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = self.recording && parents.iter().any(|&p| self.needs(p));
        let op = if self.recording { op } else { Op::Input };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; `requires_grad` makes its gradient available from [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let requires_grad = self.recording && p.trainable;
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> TensorResult<Var> {
        let shape = ConvShape::new(self.dims(x), self.dims(w), stride, pad)?;
        if let Some(b) = b {
            if self.value(b).len() != shape.out_channels {
                return Err(TensorError::AxisMismatch {
                    op: "conv3d",
                    axis: "bias",
                    left: shape.out_channels,
                    right: self.value(b).len(),
                });
            }
        }
        let out = conv::forward(
            &shape,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::Conv { x, w, b, shape }, &parents))
    }

    pub fn pool3d(
        &mut self,
        x: Var,
        mode: PoolMode,
        window: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> TensorResult<Var> {
        let shape = PoolShape::new(self.dims(x), window, stride, pad)?;
        let pooled = pool::forward(&shape, self.value(x), mode);
        let argmax = if self.recording { pooled.argmax } else { Vec::new() };
        Ok(self.push(
            pooled.output,
            Op::Pool {
                x,
                shape,
                mode,
                argmax,
            },
            &[x],
        ))
    }

    /// Mean over every axis after the second: `[N,C,...] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> TensorResult<Var> {
        let dims = self.dims(x).to_vec();
        if dims.len() < 3 {
            return Err(TensorError::Rank {
                op: "global_avg_pool",
                expected: 5,
                dims,
            });
        }
        let vol: usize = dims[2..].iter().product();
        let inv = T::one() / T::from_f64(vol as f64);
        let data = self
            .value(x)
            .data()
            .chunks(vol)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(&dims[..2], data)?;
        Ok(self.push(out, Op::GlobalAvg { x }, &[x]))
    }

    /// `x[N,D] · w[D',D]ᵀ + b[D']`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> TensorResult<Var> {
        let (n, d) = rows_cols("affine", self.value(x))?;
        let (dout, din) = rows_cols("affine", self.value(w))?;
        if din != d {
            return Err(TensorError::AxisMismatch {
                op: "affine",
                axis: "inner",
                left: d,
                right: din,
            });
        }
        if let Some(b) = b {
            if self.value(b).len() != dout {
                return Err(TensorError::AxisMismatch {
                    op: "affine",
                    axis: "bias",
                    left: dout,
                    right: self.value(b).len(),
                });
            }
        }
        let mut out = vec![T::zero(); n * dout];
        matmul_nt(n, d, dout, self.value(x).data(), self.value(w).data(), &mut out, false);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o = *o + bv;
                }
            }
        }
        let out = Tensor::new(&[n, dout], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(out, Op::Affine { x, w, b }, &parents))
    }

    /// `a[N,D] · b[K,D]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.affine(a, b, None)
    }

    pub fn batch_norm3d(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> TensorResult<(Var, Option<ChannelStats<T>>)> {
        let xv = self.value(x);
        xv.expect_rank("batch_norm3d", 5)?;
        let dims = xv.dims().to_vec();
        let (n, c) = (dims[0], dims[1]);
        let vol: usize = dims[2..].iter().product();
        for (p, name) in [(scale, "scale"), (shift, "shift")] {
            if self.value(p).len() != c {
                return Err(TensorError::AxisMismatch {
                    op: "batch_norm3d",
                    axis: name,
                    left: c,
                    right: self.value(p).len(),
                });
            }
        }
        let eps = T::from_f64(eps);
        let count = n * vol;
        let (mean, var, train) = match mode {
            BnMode::Train => {
                if count < 2 {
                    return Err(TensorError::Invalid {
                        op: "batch_norm3d",
                        reason: format!("train mode needs at least 2 values per channel, got {count}"),
                    });
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let inv = T::one() / T::from_f64(count as f64);
                for (i, plane) in xv.data().chunks(vol).enumerate() {
                    mean[i % c] = mean[i % c] + plane.iter().copied().sum::<T>();
                }
                mean.iter_mut().for_each(|m| *m = *m * inv);
                for (i, plane) in xv.data().chunks(vol).enumerate() {
                    let m = mean[i % c];
                    var[i % c] = var[i % c] + plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                }
                var.iter_mut().for_each(|v| *v = *v * inv);
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(TensorError::AxisMismatch {
                        op: "batch_norm3d",
                        axis: "running statistics",
                        left: c,
                        right: mean.len().min(var.len()),
                    });
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let mut out = Vec::with_capacity(xv.len());
        for (i, plane) in xv.data().chunks(vol).enumerate() {
            let ch = i % c;
            let (m, is, g, b) = (mean[ch], inv_std[ch], sc[ch], sh[ch]);
            out.extend(plane.iter().map(|&v| (v - m) * is * g + b));
        }
        let out = Tensor::new(&dims, out)?;
        let stats = train.then(|| ChannelStats {
            mean: mean.clone(),
            var,
        });
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                inv_std,
                train,
            },
            &[x, scale, shift],
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        same_dims("add", self.dims(a), self.dims(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        same_dims("mul", self.dims(a), self.dims(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.dims(a), data)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x])
    }

    /// `Σ weights ⊙ x` against a constant tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> TensorResult<Var> {
        same_dims("weighted_sum", self.dims(x), weights.dims())?;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Rows scaled to unit Euclidean norm; rows with norm below `eps` are an error.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> TensorResult<Var> {
        let (_, d) = rows_cols("l2_normalize", self.value(x))?;
        let mut norms = Vec::new();
        let mut out = Vec::with_capacity(self.value(x).len());
        for (r, row) in self.value(x).data().chunks(d).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(norm.as_f64() >= eps) {
                return Err(TensorError::ZeroNorm {
                    op: "l2_normalize",
                    row: r,
                    eps,
                });
            }
            out.extend(row.iter().map(|&v| v / norm));
            norms.push(norm);
        }
        let out = Tensor::new(self.dims(x), out)?;
        Ok(self.push(out, Op::L2Normalize { x, norms }, &[x]))
    }

    /// Row softmax of `x / tau`.
    pub fn softmax(&mut self, x: Var, tau: f64) -> TensorResult<Var> {
        let (_, k) = rows_cols("softmax", self.value(x))?;
        if !(tau > 0.0) {
            return Err(TensorError::Invalid {
                op: "softmax",
                reason: format!("temperature must be positive, got {tau}"),
            });
        }
        let tau = T::from_f64(tau);
        let out = Tensor::new(self.dims(x), softmax_rows(self.value(x).data(), k, tau))?;
        Ok(self.push(out, Op::Softmax { x, tau }, &[x]))
    }

    /// Mean over rows of `−Σ_k target·log softmax(logits / tau)`.
    pub fn cross_entropy_soft(
        &mut self,
        logits: Var,
        target: Tensor<T>,
        tau: f64,
    ) -> TensorResult<Var> {
        let (n, k) = rows_cols("cross_entropy_soft", self.value(logits))?;
        same_dims("cross_entropy_soft", self.dims(logits), target.dims())?;
        if !(tau > 0.0) {
            return Err(TensorError::Invalid {
                op: "cross_entropy_soft",
                reason: format!("temperature must be positive, got {tau}"),
            });
        }
        for (r, row) in target.data().chunks(k).enumerate() {
            let s: f64 = row.iter().map(|v| v.as_f64()).sum();
            if row.iter().any(|v| !(v.as_f64() >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(TensorError::NotSimplex {
                    op: "cross_entropy_soft",
                    row: r,
                    sum: s,
                });
            }
        }
        let tau_t = T::from_f64(tau);
        let lv = self.value(logits).data();
        let mut loss = T::zero();
        for (row, trow) in lv.chunks(k).zip(target.data().chunks(k)) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = row.iter().map(|&v| ((v - m) / tau_t).exp()).sum::<T>().ln();
            for (&l, &t) in row.iter().zip(trow) {
                if t > T::zero() {
                    loss = loss - t * ((l - m) / tau_t - lse);
                }
            }
        }
        loss = loss / T::from_f64(n as f64);
        let probs = softmax_rows(lv, k, tau_t);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftCrossEntropy {
                logits,
                target,
                tau: tau_t,
                probs,
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of logits `[N,1]` (or `[N]`) against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> TensorResult<Var> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(TensorError::AxisMismatch {
                op: "bce_with_logits",
                axis: "batch",
                left: lv.len(),
                right: targets.len(),
            });
        }
        let n = T::from_f64(targets.len() as f64);
        let targets: Vec<T> = targets.iter().map(|&t| T::from_f64(t)).collect();
        let mut loss = T::zero();
        for (&l, &t) in lv.data().iter().zip(&targets) {
            loss = loss + l.max(T::zero()) - l * t + (T::one() + (-l.abs()).exp()).ln();
        }
        Ok(self.push(
            Tensor::scalar(loss / n),
            Op::BceLogits { logits, targets },
            &[logits],
        ))
    }

    /// Concatenates `[N, D_i]` tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> TensorResult<Var> {
        let mut widths = Vec::new();
        let mut rows = None;
        for &p in parts {
            let (n, d) = rows_cols("concat_cols", self.value(p))?;
            if let Some(r) = rows {
                if r != n {
                    return Err(TensorError::AxisMismatch {
                        op: "concat_cols",
                        axis: "rows",
                        left: r,
                        right: n,
                    });
                }
            }
            rows = Some(n);
            widths.push(d);
        }
        let n = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &d) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * d..(r + 1) * d]);
            }
        }
        let out = Tensor::new(&[n, total], out)?;
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> TensorResult<Var> {
        let dims = self.dims(x).to_vec();
        if dims.is_empty() || start + len > dims[0] {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                reason: format!("rows {start}..{} out of range for dims {dims:?}", start + len),
            });
        }
        let row: usize = dims[1..].iter().product();
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let mut out_dims = dims;
        out_dims[0] = len;
        let out = Tensor::new(&out_dims, data)?;
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    fn check_loss(&self, loss: Var) -> TensorResult<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                reason: format!("loss must be a scalar, got dims {:?}", self.dims(loss)),
            });
        }
        if !self.recording {
            return Err(TensorError::Invalid {
                op: "backward",
                reason: "graph was built without recording".into(),
            });
        }
        Ok(())
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> TensorResult<Gradients<T>> {
        self.check_loss(loss)?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.needs(loss) {
            grads[loss.0] = Some(Tensor::full(self.dims(loss), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Input | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward, accumulating every parameter gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> TensorResult<()> {
        let grads = self.backward(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*id, g);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_vec(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Vec<T>) {
        if !self.needs(v) {
            return;
        }
        let t = Tensor::new(self.dims(v), g).expect("gradient dims");
        self.accumulate(grads, v, t);
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv { x, w, b, shape } => {
                let cg = conv::backward(
                    shape,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    self.needs(*x),
                );
                if let Some(dx) = cg.input {
                    self.accumulate_vec(grads, *x, dx);
                }
                self.accumulate_vec(grads, *w, cg.kernel);
                if let Some(b) = b {
                    self.accumulate_vec(grads, *b, cg.bias);
                }
            }
            Op::Pool {
                x,
                shape,
                mode,
                argmax,
            } => {
                let dx = pool::backward(shape, *mode, argmax, gd);
                self.accumulate_vec(grads, *x, dx);
            }
            Op::GlobalAvg { x } => {
                let dims = self.dims(*x);
                let vol: usize = dims[2..].iter().product();
                let inv = T::one() / T::from_f64(vol as f64);
                let mut dx = Vec::with_capacity(vol * gd.len());
                for &gv in gd {
                    dx.extend(std::iter::repeat(gv * inv).take(vol));
                }
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Affine { x, w, b } => {
                let (n, d) = (self.dims(*x)[0], self.dims(*x)[1]);
                let dout = self.dims(*w)[0];
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    matmul(n, dout, d, gd, self.value(*w).data(), &mut dx, false);
                    self.accumulate_vec(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); dout * d];
                    matmul_tn(dout, n, d, gd, self.value(*x).data(), &mut dw, false);
                    self.accumulate_vec(grads, *w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); dout];
                    for row in gd.chunks(dout) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    self.accumulate_vec(grads, *b, db);
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                inv_std,
                train,
            } => {
                let dims = self.dims(*x);
                let c = dims[1];
                let vol: usize = dims[2..].iter().product();
                let xv = self.value(*x).data();
                let sc = self.value(*scale).data();
                let mut dscale = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                let mut sum_dxhat_xhat = vec![T::zero(); c];
                let mut sum_dxhat = vec![T::zero(); c];
                for (pi, (plane, gp)) in xv.chunks(vol).zip(gd.chunks(vol)).enumerate() {
                    let ch = pi % c;
                    for (&v, &gv) in plane.iter().zip(gp) {
                        let xhat = (v - mean[ch]) * inv_std[ch];
                        dscale[ch] = dscale[ch] + gv * xhat;
                        dshift[ch] = dshift[ch] + gv;
                        let dxhat = gv * sc[ch];
                        sum_dxhat[ch] = sum_dxhat[ch] + dxhat;
                        sum_dxhat_xhat[ch] = sum_dxhat_xhat[ch] + dxhat * xhat;
                    }
                }
                if self.needs(*x) {
                    let count = T::from_f64((xv.len() / c) as f64);
                    let mut dx = Vec::with_capacity(xv.len());
                    for (pi, (plane, gp)) in xv.chunks(vol).zip(gd.chunks(vol)).enumerate() {
                        let ch = pi % c;
                        for (&v, &gv) in plane.iter().zip(gp) {
                            let dxhat = gv * sc[ch];
                            if *train {
                                let xhat = (v - mean[ch]) * inv_std[ch];
                                dx.push(
                                    inv_std[ch] / count
                                        * (count * dxhat - sum_dxhat[ch] - xhat * sum_dxhat_xhat[ch]),
                                );
                            } else {
                                dx.push(dxhat * inv_std[ch]);
                            }
                        }
                    }
                    self.accumulate_vec(grads, *x, dx);
                }
                self.accumulate_vec(grads, *scale, dscale);
                self.accumulate_vec(grads, *shift, dshift);
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let da = gd.iter().zip(bv).map(|(&gv, &y)| gv * y).collect();
                let db = gd.iter().zip(av).map(|(&gv, &y)| gv * y).collect();
                self.accumulate_vec(grads, *a, da);
                self.accumulate_vec(grads, *b, db);
            }
            Op::Scale { x, c } => {
                self.accumulate(grads, *x, g.map(|v| v * *c));
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, Tensor::full(self.dims(*x), gd[0]));
            }
            Op::WeightedSum { x, weights } => {
                self.accumulate(grads, *x, weights.map(|w| w * gd[0]));
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.data();
                let d = node.value.dims()[1];
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), &n) in y.chunks(d).zip(gd.chunks(d)).zip(norms) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * dot) / n));
                }
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Softmax { x, tau } => {
                let y = node.value.data();
                let k = node.value.dims()[1];
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(k).zip(gd.chunks(k)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot) / *tau));
                }
                self.accumulate_vec(grads, *x, dx);
            }
            Op::SoftCrossEntropy {
                logits,
                target,
                tau,
                probs,
            } => {
                let (n, k) = (self.dims(*logits)[0], self.dims(*logits)[1]);
                let scale = gd[0] / (*tau * T::from_f64(n as f64));
                let mut dx = Vec::with_capacity(n * k);
                for (pr, tr) in probs.chunks(k).zip(target.data().chunks(k)) {
                    let mass: T = tr.iter().copied().sum();
                    dx.extend(pr.iter().zip(tr).map(|(&p, &t)| (p * mass - t) * scale));
                }
                self.accumulate_vec(grads, *logits, dx);
            }
            Op::BceLogits { logits, targets } => {
                let n = T::from_f64(targets.len() as f64);
                let dx = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&l, &t)| (T::one() / (T::one() + (-l).exp()) - t) * gd[0] / n)
                    .collect();
                self.accumulate_vec(grads, *logits, dx);
            }
            Op::ConcatCols { parts } => {
                let n = node.value.dims()[0];
                let total = node.value.dims()[1];
                let mut offset = 0;
                for &p in parts {
                    let d = self.dims(p)[1];
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(n * d);
                        for r in 0..n {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + d]);
                        }
                        self.accumulate_vec(grads, p, dp);
                    }
                    offset += d;
                }
            }
            Op::SliceRows { x, start } => {
                let dims = self.dims(*x);
                let row: usize = dims[1..].iter().product();
                let mut dx = vec![T::zero(); self.value(*x).len()];
                dx[start * row..start * row + gd.len()].copy_from_slice(gd);
                self.accumulate_vec(grads, *x, dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(dims, v).unwrap()
    }

    #[test]
    fn affine_direct_dot_products() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2], &[1., 2.]), false);
        let w = g.input(t(&[2, 2], &[1., 1., 1., -1.]), false);
        let b = g.input(t(&[2], &[0., 0.]), false);
        let y = g.affine(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[3., -1.]);
    }

    #[test]
    fn affine_identity_and_zero_weight() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2, 2], &[1.5, -2., 3., 4.]), false);
        let eye = g.input(t(&[2, 2], &[1., 0., 0., 1.]), false);
        let zb = g.input(Tensor::zeros(&[2]), false);
        let y = g.affine(x, eye, Some(zb)).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let zw = g.input(Tensor::zeros(&[3, 2]), false);
        let b = g.input(t(&[3], &[0.5, -1., 2.]), false);
        let y = g.affine(x, zw, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1., 2., 0.5, -1., 2.]);
    }

    #[test]
    fn affine_inner_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 3]), false);
        let w = g.input(Tensor::zeros(&[2, 2]), false);
        assert!(matches!(
            g.affine(x, w, None),
            Err(TensorError::AxisMismatch { axis: "inner", .. })
        ));
    }

    #[test]
    fn batch_norm_two_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2, 1, 1, 1, 1], &[1., 3.]), false);
        let s = g.input(t(&[1], &[1.]), false);
        let b = g.input(t(&[1], &[0.]), false);
        let (y, stats) = g.batch_norm3d(x, s, b, BnMode::Train, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1., 1.]);
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);
    }

    #[test]
    fn batch_norm_zero_scale_gives_shift() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2, 1, 1, 3], &[1., 5., -2., 0.3, 9., 4.]), false);
        let s = g.input(Tensor::zeros(&[2]), false);
        let b = g.input(t(&[2], &[0.7, 0.7]), false);
        let (y, _) = g.batch_norm3d(x, s, b, BnMode::Train, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn batch_norm_standardized_input_passes_through() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 1, 1, 2, 2], &[1., -1., 1., -1.]), false);
        let s = g.input(t(&[1], &[1.]), false);
        let b = g.input(t(&[1], &[0.]), false);
        let (y, _) = g.batch_norm3d(x, s, b, BnMode::Train, 1e-8).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn batch_norm_single_value_channel_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 2, 1, 1, 1]), false);
        let s = g.input(Tensor::full(&[2], 1.), false);
        let b = g.input(Tensor::zeros(&[2]), false);
        assert!(g.batch_norm3d(x, s, b, BnMode::Train, 1e-5).is_err());
        let (m, v) = ([0.0, 0.0], [1.0, 1.0]);
        assert!(g
            .batch_norm3d(x, s, b, BnMode::Eval { mean: &m, var: &v }, 1e-5)
            .is_ok());
    }

    #[test]
    fn l2_normalize_three_four() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2], &[3., 4.]), false);
        let y = g.l2_normalize(x, 1e-12).unwrap();
        assert_eq!(g.value(y).data(), &[0.6, 0.8]);
        let z = g.input(Tensor::zeros(&[1, 2]), false);
        assert!(matches!(g.l2_normalize(z, 1e-12), Err(TensorError::ZeroNorm { row: 0, .. })));
    }

    #[test]
    fn softmax_uniform_row() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[2, 4], 0.3), false);
        let y = g.softmax(x, 0.1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn relu_idempotent_and_kills_negatives() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[4], &[-2., -0.5, 0.5, 3.]), false);
        let a = g.relu(x);
        let b = g.relu(a);
        assert_eq!(g.value(a).data(), &[0., 0., 0.5, 3.]);
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut g = Graph::<f64>::new();
        let l = g.input(t(&[1, 2], &[10., 0.]), false);
        let loss = g.cross_entropy_soft(l, t(&[1, 2], &[1., 0.]), 1.0).unwrap();
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert!((g.value(loss).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 4.54e-5).abs() < 1e-7);

        let u = g.input(Tensor::full(&[2, 3], 1.7), false);
        let loss = g
            .cross_entropy_soft(u, t(&[2, 3], &[0.2, 0.3, 0.5, 1., 0., 0.]), 0.5)
            .unwrap();
        assert!((g.value(loss).data()[0] - 3f64.ln()).abs() < 1e-12);

        let logits = t(&[1, 3], &[0.4, -1.2, 2.0]);
        let p = softmax_rows(logits.data(), 3, 0.7);
        let entropy: f64 = -p.iter().map(|v| v * v.ln()).sum::<f64>();
        let l = g.input(logits, false);
        let loss = g.cross_entropy_soft(l, t(&[1, 3], &p), 0.7).unwrap();
        assert!((g.value(loss).data()[0] - entropy).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::zeros(&[1, 2]), false);
        assert!(matches!(
            g.cross_entropy_soft(l, t(&[1, 2], &[0.7, 0.7]), 1.0),
            Err(TensorError::NotSimplex { .. })
        ));
        assert!(g.cross_entropy_soft(l, t(&[1, 2], &[1.5, -0.5]), 1.0).is_err());
    }

    #[test]
    fn square_sum_gradient_is_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[3], &[1., -2., 0.5]), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2., -4., 1.]);
    }

    #[test]
    fn relu_blocks_negative_path() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[-1., 2.]), true);
        let r = g.relu(x);
        let loss = g.sum(r);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0., 1.]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1., 2.]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unreachable_params_keep_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", t(&[2], &[1., 2.])).unwrap();
        let b = store.add("b", t(&[2], &[3., 4.])).unwrap();
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let _bv = g.param(&store, b);
        let loss = g.sum(av);
        g.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(a).grad.data(), &[1., 1.]);
        assert_eq!(store.get(b).grad.data(), &[0., 0.]);
    }
}
