//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<S>, Vec<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: param_sizes.iter().map(|&n| (vec![S::zero(); n], vec![S::zero(); n])).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update in place. `params` and `grads` must
    /// align with the sizes given at construction.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[&Tensor<S>]) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!(
                    "{} params, {} grads, {} states",
                    params.len(),
                    grads.len(),
                    self.moments.len()
                ),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::of_f64(self.beta1);
        let b2 = S::of_f64(self.beta2);
        let one = S::one();
        let corr1 = S::of_f64(1.0 - self.beta1.powi(t));
        let corr2 = S::of_f64(1.0 - self.beta2.powi(t));
        let lr = S::of_f64(self.lr);
        let eps = S::of_f64(self.eps);

        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            if p.numel() != m.len() || g.numel() != m.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!("param {:?} vs grad {:?} vs state {}", p.shape(), g.shape(), m.len()),
                });
            }
            let gd = g.data().to_vec();
            let pd = p.data_mut();
            for i in 0..gd.len() {
                m[i] = b1 * m[i] + (one - b1) * gd[i];
                v[i] = b2 * v[i] + (one - b2) * gd[i] * gd[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
