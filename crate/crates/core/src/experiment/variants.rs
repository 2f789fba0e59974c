use super::ExperimentError;
use crate::model::SlowFastConfig;
use crate::swav::SwavConfig;
use std::collections::BTreeMap;

/// A named way of configuring the network and its training objective.
pub trait ModelVariant: Send + Sync {
    fn name(&self) -> &'static str;
    fn configure(&self, net: &mut SlowFastConfig, swav: &mut SwavConfig);
}

struct SlowFastSwav;
struct SlowFastOnly;
struct ResNet3d;

impl ModelVariant for SlowFastSwav {
    fn name(&self) -> &'static str {
        "slowfast_swav"
    }

    fn configure(&self, net: &mut SlowFastConfig, _: &mut SwavConfig) {
        net.single_pathway = false;
    }
}

impl ModelVariant for SlowFastOnly {
    fn name(&self) -> &'static str {
        "slowfast"
    }

    fn configure(&self, net: &mut SlowFastConfig, swav: &mut SwavConfig) {
        net.single_pathway = false;
        swav.swav_weight = 0.0;
    }
}

/// Slow pathway alone, supervised only.
impl ModelVariant for ResNet3d {
    fn name(&self) -> &'static str {
        "resnet3d"
    }

    fn configure(&self, net: &mut SlowFastConfig, swav: &mut SwavConfig) {
        net.single_pathway = true;
        swav.swav_weight = 0.0;
    }
}

pub struct VariantRegistry {
    variants: BTreeMap<&'static str, Box<dyn ModelVariant>>,
}

impl Default for VariantRegistry {
    fn default() -> Self {
        let mut r = Self { variants: BTreeMap::new() };
        r.register(Box::new(SlowFastSwav));
        r.register(Box::new(SlowFastOnly));
        r.register(Box::new(ResNet3d));
        r
    }
}

impl VariantRegistry {
    pub fn register(&mut self, v: Box<dyn ModelVariant>) {
        self.variants.insert(v.name(), v);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.variants.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&dyn ModelVariant, ExperimentError> {
        self.variants
            .get(name)
            .map(|v| v.as_ref())
            .ok_or_else(|| ExperimentError::UnknownVariant {
                name: name.into(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })
    }
}
