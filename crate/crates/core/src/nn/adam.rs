//! Adam with decoupled weight decay and a per-epoch exponential schedule.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub gamma: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
    step_count: u64,
    epochs: u32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            epochs: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Current learning rate, `lr · gamma^epochs`.
    pub fn learning_rate(&self) -> f64 {
        self.config.lr * self.config.gamma.powi(self.epochs as i32)
    }

    pub fn end_epoch(&mut self) {
        self.epochs += 1;
    }

    /// One bias-corrected update. Parameters are left untouched if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::shape("adam step", self.first_moment.len(), grads.len()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.raw_dim() != self.first_moment[i].raw_dim() {
                return Err(Error::shape(
                    "adam gradient",
                    format!("{:?}", self.first_moment[i].dim()),
                    format!("{:?}", g.dim()),
                ));
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("gradient of parameter {i} (entry {bad}) at step {}", self.step_count),
                });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let lr = self.learning_rate();
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
            });
        }
        Ok(())
    }
}
