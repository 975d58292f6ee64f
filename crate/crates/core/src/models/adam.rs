use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moments plus a step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub hyper: AdamParams,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(hyper: AdamParams, params: &[&Tensor]) -> Self {
        AdamState {
            hyper,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn apply(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
    ) -> Result<(), ModelError> {
        if self.hyper.lr <= 0.0 {
            return Err(ModelError::BadLearningRate(self.hyper.lr));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(ModelError::GradShapeMismatch {
                    index: i,
                    params: p.shape().to_vec(),
                    grads: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(ModelError::NonFiniteGrad(i));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = p.data_mut();
            for ((pi, mi), (vi, &gi)) in pd
                .iter_mut()
                .zip(md.iter_mut())
                .zip(vd.iter_mut().zip(g.data()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
