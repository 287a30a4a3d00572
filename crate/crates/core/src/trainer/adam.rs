//! Bias-corrected Adam over a [`ParamSet`].

use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::{Matrix, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments shaped like the parameters they follow.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || {
            let mut p = ParamSet::new();
            for (n, s) in params.manifest() {
                p.insert(n, Matrix::zeros(s.rows, s.cols));
            }
            p
        };
        AdamState { config, m: zeros(), v: zeros(), step: 0 }
    }

    /// One update; `grads[i]` belongs to the `i`-th parameter of `params`.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Matrix]) -> Result<()> {
        if grads.len() != params.len() || self.m.manifest() != params.manifest() {
            return Err(Error::Spec(format!(
                "adam: {} gradients / {} moments for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch { op: "adam", left: p.shape(), right: g.shape() }.into());
            }
            if !g.all_finite() {
                return Err(TensorError::Domain { op: "adam", detail: format!("non-finite gradient for {name}") }.into());
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let moments = self.m.iter_mut().zip(self.v.iter_mut());
        for (((_, p), ((_, m), (_, v))), g) in params.iter_mut().zip(moments).zip(grads) {
            let (p, m, v) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
            for (i, &gi) in g.as_slice().iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
