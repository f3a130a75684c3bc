use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: ParamStore,
    v: ParamStore,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::Dimension(
                "adam: gradients, moments and parameters differ in layout".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = scalar_store(1.5);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.step(&mut p, &scalar_store(0.0)).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut p = scalar_store(0.0);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(0.1));
        s.step(&mut p, &scalar_store(1.0)).unwrap();
        let w = p.get("w").unwrap().data()[0];
        assert!((w + 0.1).abs() < 1e-8, "{w}");
    }

    #[test]
    fn layout_mismatch() {
        let mut p = scalar_store(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let mut g = ParamStore::new();
        g.insert("w", Tensor::row(&[1.0, 2.0]));
        assert!(matches!(s.step(&mut p, &g), Err(Error::Dimension(_))));
    }
}
