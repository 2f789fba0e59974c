use super::element::Element;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: length {len} does not match dims {dims:?}")]
    LengthMismatch {
        op: &'static str,
        dims: Vec<usize>,
        len: usize,
    },
    #[error("{op}: expected rank {expected}, got dims {dims:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        dims: Vec<usize>,
    },
    #[error("{op}: {axis} mismatch ({left} vs {right})")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op}: window {window} exceeds padded extent {extent} on axis {axis}")]
    WindowTooLarge {
        op: &'static str,
        axis: &'static str,
        window: usize,
        extent: usize,
    },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("{op}: row {row} has norm below {eps}")]
    ZeroNorm { op: &'static str, row: usize, eps: f64 },
    #[error("{op}: target row {row} is not on the simplex (sum {sum})")]
    NotSimplex { op: &'static str, row: usize, sum: f64 },
    #[error("{op}: non-finite value at index {index}")]
    NonFinite { op: &'static str, index: usize },
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Dense row-major N-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> TensorResult<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                op: "tensor",
                dims: dims.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64(dims: &[usize], values: &[f64]) -> TensorResult<Self> {
        Self::new(dims, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, dims: &[usize]) -> TensorResult<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(TensorError::LengthMismatch {
                op: "reshape",
                dims: dims.to_vec(),
                len: self.data.len(),
            });
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Checks that this tensor has exactly `rank` axes.
    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> TensorResult<()> {
        if self.dims.len() != rank {
            return Err(TensorError::Rank {
                op,
                expected: rank,
                dims: self.dims.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> std::slice::Chunks<'_, T> {
        let width = self.dims.last().copied().unwrap_or(1).max(1);
        self.data.chunks(width)
    }
}
