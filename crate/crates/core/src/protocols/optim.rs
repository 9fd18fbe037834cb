//! Learning-rate schedule and Adam.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transformer::ParamStore;

/// Inverse-square-root schedule with linear warmup:
/// `model_dim^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: usize, model_dim: usize, warmup: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::Usage("learning-rate schedule is defined from step 1".into()));
    }
    if warmup == 0 || model_dim == 0 {
        return Err(Error::Usage("warmup and model_dim must be positive".into()));
    }
    let s = step as f64;
    Ok((model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5)))
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Vec<Moments>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let moments = params
            .iter()
            .map(|(_, t)| Moments {
                first: vec![0.0; t.numel()],
                second: vec![0.0; t.numel()],
            })
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            moments,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Any non-finite gradient aborts before parameters change.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Usage(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensor(i).shape() {
                return Err(Error::dim("adam_step", params.tensor(i).shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {} at optimizer step {}",
                    params.name(i),
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.moments[i];
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m.first[j] = self.beta1 * m.first[j] + (1.0 - self.beta1) * gj;
                m.second[j] = self.beta2 * m.second[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m.first[j] / c1;
                let v_hat = m.second[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
