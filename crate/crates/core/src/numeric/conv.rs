//! Direct 3D convolution via chunked im2col + GEMM.
//!
//! Work is split into fixed-width column chunks so results do not depend on
//! the rayon thread count.

use super::element::{matmul, Element};
use super::tensor::{Tensor, TensorError, TensorResult};
use rayon::prelude::*;

const CHUNK: usize = 512;
const AXES: [&str; 3] = ["time", "height", "width"];

/// Output length along one axis, `floor((len + 2·pad − k) / stride) + 1`.
pub fn out_extent(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvShape {
    pub fn new(
        input_dims: &[usize],
        kernel_dims: &[usize],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> TensorResult<Self> {
        if input_dims.len() != 5 {
            return Err(TensorError::Rank {
                op: "conv3d",
                expected: 5,
                dims: input_dims.to_vec(),
            });
        }
        if kernel_dims.len() != 5 {
            return Err(TensorError::Rank {
                op: "conv3d",
                expected: 5,
                dims: kernel_dims.to_vec(),
            });
        }
        if kernel_dims[1] != input_dims[1] {
            return Err(TensorError::AxisMismatch {
                op: "conv3d",
                axis: "channel",
                left: input_dims[1],
                right: kernel_dims[1],
            });
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let (len, k) = (input_dims[2 + a], kernel_dims[2 + a]);
            if stride[a] == 0 {
                return Err(TensorError::Invalid {
                    op: "conv3d",
                    reason: format!("zero stride on {} axis", AXES[a]),
                });
            }
            output[a] = out_extent(len, k, stride[a], pad[a]).ok_or(
                TensorError::WindowTooLarge {
                    op: "conv3d",
                    axis: AXES[a],
                    window: k,
                    extent: len + 2 * pad[a],
                },
            )?;
        }
        Ok(Self {
            batch: input_dims[0],
            in_channels: input_dims[1],
            out_channels: kernel_dims[0],
            input: [input_dims[2], input_dims[3], input_dims[4]],
            kernel: [kernel_dims[2], kernel_dims[3], kernel_dims[4]],
            output,
            stride,
            pad,
        })
    }

    pub fn output_dims(&self) -> [usize; 5] {
        [
            self.batch,
            self.out_channels,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn chunks(&self) -> Vec<(usize, usize)> {
        let p = self.positions();
        (0..p)
            .step_by(CHUNK)
            .map(|s| (s, (s + CHUNK).min(p)))
            .collect()
    }

    /// Top-left-front input coordinate of each output position in `[p0, p1)`.
    fn bases(&self, p0: usize, p1: usize) -> Vec<[isize; 3]> {
        let [_, oh, ow] = self.output;
        (p0..p1)
            .map(|p| {
                let t = p / (oh * ow);
                let h = (p / ow) % oh;
                let w = p % ow;
                [
                    (t * self.stride[0]) as isize - self.pad[0] as isize,
                    (h * self.stride[1]) as isize - self.pad[1] as isize,
                    (w * self.stride[2]) as isize - self.pad[2] as isize,
                ]
            })
            .collect()
    }

    /// Visits every (patch row, column, input offset) triple inside bounds.
    fn for_each_tap(&self, bases: &[[isize; 3]], mut f: impl FnMut(usize, usize, usize)) {
        let [it, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let vol = self.input_volume();
        let mut row = 0;
        for c in 0..self.in_channels {
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        for (j, b) in bases.iter().enumerate() {
                            let t = b[0] + dt as isize;
                            let h = b[1] + dh as isize;
                            let w = b[2] + dw as isize;
                            if t < 0
                                || h < 0
                                || w < 0
                                || t >= it as isize
                                || h >= ih as isize
                                || w >= iw as isize
                            {
                                continue;
                            }
                            let off = c * vol
                                + (t as usize * ih + h as usize) * iw
                                + w as usize;
                            f(row, j, off);
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, sample: &[T], bases: &[[isize; 3]]) -> Vec<T> {
        let width = bases.len();
        let mut cols = vec![T::zero(); self.patch() * width];
        self.for_each_tap(bases, |row, j, off| cols[row * width + j] = sample[off]);
        cols
    }

    fn col2im<T: Element>(&self, cols: &[T], bases: &[[isize; 3]], sample_grad: &mut [T]) {
        let width = bases.len();
        self.for_each_tap(bases, |row, j, off| {
            sample_grad[off] = sample_grad[off] + cols[row * width + j]
        });
    }
}

/// Zero-padded 3D convolution of `[N,C,T,H,W]` with `[C',C,kt,kh,kw]`.
pub fn conv3d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> TensorResult<Tensor<T>> {
    let shape = ConvShape::new(input.dims(), kernel.dims(), stride, pad)?;
    if let Some(b) = bias {
        if b.len() != shape.out_channels {
            return Err(TensorError::AxisMismatch {
                op: "conv3d",
                axis: "bias",
                left: shape.out_channels,
                right: b.len(),
            });
        }
    }
    Ok(forward(&shape, input.data(), kernel.data(), bias.map(|b| b.data())))
}

pub(crate) fn forward<T: Element>(
    shape: &ConvShape,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Tensor<T> {
    let p = shape.positions();
    let co = shape.out_channels;
    let in_stride = shape.in_channels * shape.input_volume();
    let chunks = shape.chunks();
    let tasks: Vec<(usize, usize, usize)> = (0..shape.batch)
        .flat_map(|n| chunks.iter().map(move |&(a, b)| (n, a, b)))
        .collect();
    let blocks: Vec<Vec<T>> = tasks
        .par_iter()
        .map(|&(n, p0, p1)| {
            let bases = shape.bases(p0, p1);
            let cols = shape.im2col(&input[n * in_stride..(n + 1) * in_stride], &bases);
            let mut out = vec![T::zero(); co * (p1 - p0)];
            matmul(co, shape.patch(), p1 - p0, kernel, &cols, &mut out, false);
            out
        })
        .collect();
    let mut data = vec![T::zero(); shape.batch * co * p];
    for (&(n, p0, p1), block) in tasks.iter().zip(&blocks) {
        let w = p1 - p0;
        for c in 0..co {
            let dst = &mut data[(n * co + c) * p + p0..(n * co + c) * p + p1];
            dst.copy_from_slice(&block[c * w..(c + 1) * w]);
        }
    }
    if let Some(b) = bias {
        for (i, plane) in data.chunks_mut(p).enumerate() {
            let bc = b[i % co];
            plane.iter_mut().for_each(|v| *v = *v + bc);
        }
    }
    Tensor::new(&shape.output_dims(), data).expect("conv output dims")
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn backward<T: Element>(
    shape: &ConvShape,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let p = shape.positions();
    let co = shape.out_channels;
    let patch = shape.patch();
    let in_stride = shape.in_channels * shape.input_volume();
    let chunks = shape.chunks();

    let mut bias = vec![T::zero(); co];
    for (i, plane) in grad_out.chunks(p).enumerate() {
        bias[i % co] = bias[i % co] + plane.iter().copied().sum();
    }

    let per_sample: Vec<(Vec<T>, Option<Vec<T>>)> = (0..shape.batch)
        .into_par_iter()
        .map(|n| {
            let x = &input[n * in_stride..(n + 1) * in_stride];
            let g = &grad_out[n * co * p..(n + 1) * co * p];
            let mut dw = vec![T::zero(); co * patch];
            let mut dx = need_input.then(|| vec![T::zero(); in_stride]);
            for &(p0, p1) in &chunks {
                let w = p1 - p0;
                let bases = shape.bases(p0, p1);
                let cols = shape.im2col(x, &bases);
                // dW[co, patch] += g[co, chunk] · cols[patch, chunk]ᵀ
                T::gemm(
                    co,
                    w,
                    patch,
                    T::one(),
                    &g[p0..],
                    p as isize,
                    1,
                    &cols,
                    1,
                    w as isize,
                    T::one(),
                    &mut dw,
                    patch as isize,
                    1,
                );
                if let Some(dx) = dx.as_mut() {
                    // dcols[patch, chunk] = Wᵀ[patch, co] · g[co, chunk]
                    let mut dcols = vec![T::zero(); patch * w];
                    T::gemm(
                        patch,
                        co,
                        w,
                        T::one(),
                        kernel,
                        1,
                        patch as isize,
                        &g[p0..],
                        p as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        w as isize,
                        1,
                    );
                    shape.col2im(&dcols, &bases, dx);
                }
            }
            (dw, dx)
        })
        .collect();

    let mut kernel_grad = vec![T::zero(); co * patch];
    let mut input_grad = need_input.then(|| Vec::with_capacity(shape.batch * in_stride));
    for (dw, dx) in per_sample {
        for (a, b) in kernel_grad.iter_mut().zip(dw) {
            *a = *a + b;
        }
        if let (Some(all), Some(dx)) = (input_grad.as_mut(), dx) {
            all.extend(dx);
        }
    }
    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.])
            .unwrap();
        let k = Tensor::<f64>::full(&[1, 1, 1, 1, 1], 1.0);
        let y = conv3d(&x, &k, None, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_cube_sums_to_eight() {
        let x = Tensor::<f32>::full(&[1, 1, 2, 2, 2], 1.0);
        let k = Tensor::<f32>::full(&[1, 1, 2, 2, 2], 1.0);
        let y = conv3d(&x, &k, None, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data(), &[8.0]);
    }

    #[test]
    fn stem_shape_formula() {
        let s = ConvShape::new(&[2, 3, 8, 224, 224], &[8, 3, 1, 7, 7], [1, 2, 2], [0, 3, 3]).unwrap();
        assert_eq!(s.output_dims(), [2, 8, 8, 112, 112]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let err = ConvShape::new(&[1, 2, 4, 4, 4], &[1, 3, 1, 1, 1], [1; 3], [0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::AxisMismatch { axis: "channel", .. }));
    }

    #[test]
    fn oversized_kernel_names_axis() {
        let err = ConvShape::new(&[1, 1, 2, 4, 4], &[1, 1, 3, 1, 1], [1; 3], [0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::WindowTooLarge { axis: "time", .. }));
    }

    #[test]
    fn zero_padding_contributes_nothing() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 1, 1], 2.0);
        let k = Tensor::<f64>::full(&[1, 1, 1, 3, 3], 1.0);
        let y = conv3d(&x, &k, None, [1, 1, 1], [0, 1, 1]).unwrap();
        assert_eq!(y.data(), &[2.0]);
    }
}
