//! Adam with classical (coupled) L2 weight decay.

use crate::error::{Error, Result};
use crate::nn::layers::Parameter;
use ndarray::Array2;

/// Optimizer state: per-parameter moment accumulators plus hyperparameters.
///
/// The effective gradient is `g + weight_decay * theta` before the moment
/// updates, i.e. L2 regularization folded into the gradient rather than the
/// decoupled AdamW form.
#[derive(Debug)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the parameter list. All parameters must carry a
    /// gradient from a preceding backward pass.
    pub fn step(&mut self, params: &[Parameter]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    let shape = p.tensor.shape();
                    (Array2::zeros(shape), Array2::zeros(shape))
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Usage(format!(
                "optimizer was initialized for {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for p in params {
            if p.tensor.grad().is_none() {
                return Err(Error::Usage(format!(
                    "parameter {:?} has no gradient; run backward first",
                    p.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (p, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let grad = p.tensor.grad().expect("checked above");
            let mut theta = p.tensor.values_mut();
            for ((g, th), (m, v)) in grad
                .iter()
                .zip(theta.iter_mut())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g_eff = g + self.weight_decay * *th;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g_eff;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g_eff * g_eff;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *th -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Clears accumulated gradients on every parameter.
pub fn zero_grads(params: &[Parameter]) {
    for p in params {
        p.tensor.clear_grad();
    }
}
