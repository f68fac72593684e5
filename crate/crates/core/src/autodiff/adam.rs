use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.ids().map(|id| Tensor::zeros_like(params.get(id))).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter. A non-finite gradient
    /// aborts before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient {:?} for parameter {:?}", g.shape(), params.get(id).shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    epoch: self.step as usize,
                    msg: format!("gradient of {} is not finite", params.name(id)),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (id, g)) in params.ids().zip(grads).enumerate() {
            if !params.is_trainable(id) {
                continue;
            }
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = params.get_mut(id).data_mut();
            for (((pi, mi), vi), gi) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(1.5);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut s, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(s.get(s.ids().next().unwrap()).item(), 1.5);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = one_param(0.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        for _ in 0..50 {
            adam.step(&mut s, &[Tensor::scalar(2.0)]).unwrap();
        }
        assert!(s.get(s.ids().next().unwrap()).item() < 0.0);
    }

    #[test]
    fn quadratic_converges() {
        let mut s = one_param(0.0);
        let id = s.ids().next().unwrap();
        let mut adam = AdamState::new(
            &s,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            let w = s.get(id).item();
            adam.step(&mut s, &[Tensor::scalar(2.0 * (w - 3.0))]).unwrap();
        }
        assert!((s.get(id).item() - 3.0).abs() < 1e-3);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut s = one_param(1.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        let err = adam.step(&mut s, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(s.get(s.ids().next().unwrap()).item(), 1.0);
    }
}
