use super::element::Element;
use super::param::ParamStore;
use super::tensor::{TensorError, TensorResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> TensorResult<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(TensorError::Invalid {
                op: "sgd_step",
                reason: format!("invalid hyper-parameters {self:?}"),
            });
        }
        Ok(())
    }
}

/// Momentum SGD on every trainable parameter:
/// `v ← μ·v + (grad + wd·w)`, `w ← w − lr·v`.
///
/// A learning rate of zero is accepted and leaves weights untouched.
pub fn sgd_step<T: Element>(store: &mut ParamStore<T>, cfg: &SgdConfig) -> TensorResult<()> {
    cfg.validate()?;
    let lr = T::from_f64(cfg.lr);
    let mu = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);
    for p in store.iter_mut().filter(|p| p.trainable) {
        let w = p.value.data_mut();
        let v = p.momentum_buffer.data_mut();
        for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(p.grad.data()) {
            *vi = mu * *vi + (gi + wd * *wi);
            *wi = *wi - lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn store(w: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w)).unwrap();
        s.get_mut(id).grad = Tensor::scalar(g);
        s
    }

    fn w(s: &ParamStore<f64>) -> f64 {
        s.by_name("w").unwrap().value.data()[0]
    }

    #[test]
    fn plain_step() {
        let mut s = store(1.0, 1.0);
        sgd_step(&mut s, &SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 }).unwrap();
        assert!((w(&s) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        let mut s = store(1.0, 1.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        sgd_step(&mut s, &cfg).unwrap();
        assert!((w(&s) - 0.9).abs() < 1e-15);
        assert!((s.by_name("w").unwrap().momentum_buffer.data()[0] - 1.0).abs() < 1e-15);
        sgd_step(&mut s, &cfg).unwrap();
        assert!((s.by_name("w").unwrap().momentum_buffer.data()[0] - 1.9).abs() < 1e-12);
        assert!((w(&s) - 0.71).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        for mu in [0.0, 0.5, 0.99] {
            let mut s = store(0.37, 0.0);
            sgd_step(&mut s, &SgdConfig { lr: 0.3, momentum: mu, weight_decay: 0.0 }).unwrap();
            assert_eq!(w(&s), 0.37);
        }
    }

    #[test]
    fn buffers_are_not_optimized() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_buffer("running_mean", Tensor::scalar(2.0)).unwrap();
        s.get_mut(id).grad = Tensor::scalar(5.0);
        sgd_step(&mut s, &SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.1 }).unwrap();
        assert_eq!(s.value(id).data(), &[2.0]);
    }

    #[test]
    fn rejects_bad_momentum() {
        let mut s = store(1.0, 1.0);
        assert!(sgd_step(&mut s, &SgdConfig { lr: 0.1, momentum: 1.0, weight_decay: 0.0 }).is_err());
    }
}
