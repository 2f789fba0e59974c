use super::conv::out_extent;
use super::element::Element;
use super::tensor::{Tensor, TensorError, TensorResult};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolShape {
    pub planes: usize,
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl PoolShape {
    pub fn new(
        dims: &[usize],
        window: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> TensorResult<Self> {
        if dims.len() != 5 {
            return Err(TensorError::Rank {
                op: "pool3d",
                expected: 5,
                dims: dims.to_vec(),
            });
        }
        const AXES: [&str; 3] = ["time", "height", "width"];
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(TensorError::Invalid {
                    op: "pool3d",
                    reason: format!("zero stride on {} axis", AXES[a]),
                });
            }
            if pad[a] >= window[a] {
                return Err(TensorError::Invalid {
                    op: "pool3d",
                    reason: format!("padding must be smaller than the window on {} axis", AXES[a]),
                });
            }
            output[a] = out_extent(dims[2 + a], window[a], stride[a], pad[a]).ok_or(
                TensorError::WindowTooLarge {
                    op: "pool3d",
                    axis: AXES[a],
                    window: window[a],
                    extent: dims[2 + a] + 2 * pad[a],
                },
            )?;
        }
        Ok(Self {
            planes: dims[0] * dims[1],
            input: [dims[2], dims[3], dims[4]],
            window,
            stride,
            pad,
            output,
        })
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    /// In-bounds input offsets covered by output position `(t,h,w)`, row-major.
    fn window_offsets(&self, t: usize, h: usize, w: usize, out: &mut Vec<usize>) {
        out.clear();
        let [it, ih, iw] = self.input;
        let o = [t, h, w];
        let mut lo = [0isize; 3];
        for a in 0..3 {
            lo[a] = (o[a] * self.stride[a]) as isize - self.pad[a] as isize;
        }
        for dt in 0..self.window[0] as isize {
            let tt = lo[0] + dt;
            if tt < 0 || tt >= it as isize {
                continue;
            }
            for dh in 0..self.window[1] as isize {
                let hh = lo[1] + dh;
                if hh < 0 || hh >= ih as isize {
                    continue;
                }
                for dw in 0..self.window[2] as isize {
                    let ww = lo[2] + dw;
                    if ww < 0 || ww >= iw as isize {
                        continue;
                    }
                    out.push((tt as usize * ih + hh as usize) * iw + ww as usize);
                }
            }
        }
    }
}

/// Pooled tensor plus, for max mode, the flat input index each output came from.
pub(crate) struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Padded positions never win a max and are excluded from averages.
pub fn pool3d<T: Element>(
    input: &Tensor<T>,
    mode: PoolMode,
    window: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
) -> TensorResult<Tensor<T>> {
    let shape = PoolShape::new(input.dims(), window, stride, pad)?;
    Ok(forward(&shape, input, mode).output)
}

pub(crate) fn forward<T: Element>(shape: &PoolShape, input: &Tensor<T>, mode: PoolMode) -> Pooled<T> {
    let iv = shape.in_volume();
    let ov = shape.out_volume();
    let [_, oh, ow] = shape.output;
    let per_plane: Vec<(Vec<T>, Vec<usize>)> = (0..shape.planes)
        .into_par_iter()
        .map(|pl| {
            let x = &input.data()[pl * iv..(pl + 1) * iv];
            let mut vals = Vec::with_capacity(ov);
            let mut idx = Vec::with_capacity(if mode == PoolMode::Max { ov } else { 0 });
            let mut offs = Vec::new();
            for p in 0..ov {
                shape.window_offsets(p / (oh * ow), (p / ow) % oh, p % ow, &mut offs);
                match mode {
                    PoolMode::Max => {
                        let mut best = offs[0];
                        for &o in &offs[1..] {
                            if x[o] > x[best] {
                                best = o;
                            }
                        }
                        vals.push(x[best]);
                        idx.push(pl * iv + best);
                    }
                    PoolMode::Avg => {
                        let s: T = offs.iter().map(|&o| x[o]).sum();
                        vals.push(s / T::from_f64(offs.len() as f64));
                    }
                }
            }
            (vals, idx)
        })
        .collect();
    let mut data = Vec::with_capacity(shape.planes * ov);
    let mut argmax = Vec::new();
    for (v, i) in per_plane {
        data.extend(v);
        argmax.extend(i);
    }
    let mut dims = input.dims().to_vec();
    dims[2..].copy_from_slice(&shape.output);
    Pooled {
        output: Tensor::new(&dims, data).expect("pool output dims"),
        argmax,
    }
}

pub(crate) fn backward<T: Element>(
    shape: &PoolShape,
    mode: PoolMode,
    argmax: &[usize],
    grad_out: &[T],
) -> Vec<T> {
    let iv = shape.in_volume();
    let mut dx = vec![T::zero(); shape.planes * iv];
    match mode {
        PoolMode::Max => {
            for (&i, &g) in argmax.iter().zip(grad_out) {
                dx[i] = dx[i] + g;
            }
        }
        PoolMode::Avg => {
            let ov = shape.out_volume();
            let [_, oh, ow] = shape.output;
            let mut offs = Vec::new();
            for pl in 0..shape.planes {
                for p in 0..ov {
                    shape.window_offsets(p / (oh * ow), (p / ow) % oh, p % ow, &mut offs);
                    let g = grad_out[pl * ov + p] / T::from_f64(offs.len() as f64);
                    for &o in &offs {
                        dx[pl * iv + o] = dx[pl * iv + o] + g;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_patch() {
        let x = Tensor::<f32>::from_f64(&[1, 1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let y = pool3d(&x, PoolMode::Max, [1, 2, 2], [1, 2, 2], [0; 3]).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn avg_of_pair() {
        let x = Tensor::<f32>::from_f64(&[1, 1, 1, 1, 2], &[2., 4.]).unwrap();
        let y = pool3d(&x, PoolMode::Avg, [1, 1, 2], [1, 1, 2], [0; 3]).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn constant_input_max_is_constant() {
        let x = Tensor::<f32>::full(&[2, 3, 2, 5, 5], 1.5);
        let y = pool3d(&x, PoolMode::Max, [1, 3, 3], [1, 2, 2], [0, 1, 1]).unwrap();
        assert_eq!(y.dims(), &[2, 3, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn ties_route_to_first_index() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 2, 2], 7.0);
        let shape = PoolShape::new(x.dims(), [1, 2, 2], [1, 2, 2], [0; 3]).unwrap();
        let pooled = forward(&shape, &x, PoolMode::Max);
        assert_eq!(pooled.argmax, vec![0]);
        let dx = backward(&shape, PoolMode::Max, &pooled.argmax, &[1.0]);
        assert_eq!(dx, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 2, 2]);
        let err = pool3d(&x, PoolMode::Max, [1, 3, 3], [1, 1, 1], [0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::WindowTooLarge { axis: "height", .. }));
    }
}
