//! Bias-corrected Adam over a named parameter store.

use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment estimates per parameter plus the
/// step counter driving bias correction.
pub struct Adam<E: Element> {
    config: AdamConfig,
    step: u64,
    m: IndexMap<String, Tensor<E>>,
    v: IndexMap<String, Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(params: &ParamStore<E>, config: AdamConfig) -> Self {
        let zeros = |_: &str, t: &Tensor<E>| Tensor::<E>::zeros(t.shape());
        Adam {
            config,
            step: 0,
            m: params
                .iter()
                .map(|(n, t)| (n.to_string(), zeros(n, t)))
                .collect(),
            v: params
                .iter()
                .map(|(n, t)| (n.to_string(), zeros(n, t)))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(
        &mut self,
        params: &mut ParamStore<E>,
        grads: &IndexMap<String, Tensor<E>>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let b1 = E::from_f64(self.config.beta1);
        let b2 = E::from_f64(self.config.beta2);
        let eps = E::from_f64(self.config.eps);
        let one = E::ONE;
        let corr1 = E::from_f64(1.0 - self.config.beta1.powi(self.step as i32));
        let corr2 = E::from_f64(1.0 - self.config.beta2.powi(self.step as i32));
        let lr = E::from_f64(lr);

        for (name, grad) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != grad.shape() {
                return Err(Error::shape(format!(
                    "adam: gradient shape {:?} != parameter '{name}' shape {:?}",
                    grad.shape(),
                    p.shape()
                )));
            }
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("adam state missing '{name}'")))?;
            let v = self
                .v
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("adam state missing '{name}'")))?;
            if m.shape() != grad.shape() {
                return Err(Error::shape(format!("adam: stale state for '{name}'")));
            }
            for i in 0..grad.numel() {
                let g = grad.data()[i];
                let mi = b1 * m.data()[i] + (one - b1) * g;
                let vi = b2 * v.data()[i] + (one - b2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / corr1;
                let v_hat = vi / corr2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
