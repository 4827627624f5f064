use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients stored on each parameter. Parameters
    /// without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            if self.m[k].shape() != p.shape() {
                return Err(Error::Contract(format!("moment buffer {k} does not match its parameter")));
            }
            let grad = p.grad().map(|g| g.to_vec());
            let Some(grad) = grad else { continue };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] as f64 / c1;
                let vh = v[i] as f64 / c2;
                *w -= (lr * mh / (vh.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}
