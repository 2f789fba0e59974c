use super::element::Element;
use super::tensor::{Tensor, TensorError, TensorResult};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum_buffer: Tensor<T>,
    /// Buffers (e.g. running statistics) are checkpointed but never optimized.
    pub trainable: bool,
}

/// Named collection of learnable arrays and persistent buffers, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Element> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> TensorResult<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::Invalid {
                op: "param",
                reason: format!("duplicate parameter name {name:?}"),
            });
        }
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Tensor::zeros(value.dims()),
            momentum_buffer: Tensor::zeros(value.dims()),
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> TensorResult<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> TensorResult<ParamId> {
        self.insert(name, value, false)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<T>) {
        self.params[id.0].grad.add_assign(grad);
    }

    /// Replaces a value in place; dims must match.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> TensorResult<()> {
        let p = &mut self.params[id.0];
        if p.value.dims() != value.dims() {
            return Err(TensorError::Invalid {
                op: "param",
                reason: format!(
                    "{}: dims {:?} do not match {:?}",
                    p.name,
                    value.dims(),
                    p.value.dims()
                ),
            });
        }
        p.value = value;
        Ok(())
    }
}
