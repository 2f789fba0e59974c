//! Deterministic tensor engine with a reverse-mode tape.

pub mod conv;
pub mod element;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod param;
pub mod pool;
pub mod rng;
pub mod tensor;

pub use conv::{conv3d, out_extent, ConvShape};
pub use element::Element;
pub use graph::{BnMode, ChannelStats, Gradients, Graph, Var};
pub use optim::{sgd_step, SgdConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use pool::{pool3d, PoolMode};
pub use rng::{mix_seed, Rng};
pub use tensor::{Tensor, TensorError, TensorResult};
