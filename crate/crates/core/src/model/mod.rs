//! Dual-pathway video network and the bundled trainable model.

mod config;
mod slowfast;

pub use config::SlowFastConfig;
pub use slowfast::{
    apply_bn_updates, classify_prob, lateral_fuse, BnUpdate, ForwardOutput, Fusion, Mode, SlowFast, StageTrace, BN_EPS,
    STAGE_NAMES,
};

use crate::numeric::{Element, Graph, ParamStore, Rng, TensorError, Var};
use crate::swav::{SwavConfig, SwavHead};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Network, clustering head and the parameter store they index into.
#[derive(Debug, Clone)]
pub struct Model<T: Element = f32> {
    pub net: SlowFast,
    pub head: SwavHead,
    pub store: ParamStore<T>,
}

pub struct ModelOutput<T> {
    pub net: ForwardOutput<T>,
    /// `[N, k_prototypes]` prototype similarities of the projected embedding.
    pub scores: Var,
}

impl<T: Element> Model<T> {
    pub fn init(cfg: &SlowFastConfig, swav: &SwavConfig, seed: u64) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let net = SlowFast::register(cfg, &mut store, &mut Rng::derived(seed, "init.net"))?;
        let head = SwavHead::register(swav, cfg.embed_dim(), &mut store, &mut Rng::derived(seed, "init.swav"))?;
        Ok(Self { net, head, store })
    }

    pub fn forward(&self, g: &mut Graph<T>, slow: Var, fast: Var, mode: Mode) -> Result<ModelOutput<T>, ModelError> {
        let net = self.net.forward(g, &self.store, slow, fast, mode)?;
        let head = self.head.forward(g, &self.store, net.embedding)?;
        Ok(ModelOutput {
            net,
            scores: head.scores,
        })
    }
}
