use serde::{Deserialize, Serialize};

use crate::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay applied directly to the parameters.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First/second moment state for a fixed list of parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` pairs with `params[i]`; `None` means the
    /// parameter received no gradient this step (moments still decay).
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len(), self.first.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if !p.same_shape(g) {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam_step",
                        left: p.shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (idx, p) in params.iter_mut().enumerate() {
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            let g = grads[idx].map(Tensor::data);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lr_and_decay() {
        let c = AdamConfig::default();
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.weight_decay, 1e-5);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut params = vec![Tensor::row(vec![1.5, -2.0])];
        let zero = Tensor::zeros(1, 2);
        let mut adam = Adam::new(
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &params,
        );
        for _ in 0..5 {
            adam.step(&mut params, &[Some(&zero)]).unwrap();
        }
        assert_eq!(params[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn quadratic_descends() {
        // f(x) = x^2, f'(x) = 2x
        let mut params = vec![Tensor::row(vec![1.0])];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let g = Tensor::row(vec![2.0]);
        adam.step(&mut params, &[Some(&g)]).unwrap();
        let x = params[0].data()[0];
        assert!(x < 1.0 && x > 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::zeros(2, 2)];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let g = Tensor::zeros(1, 4);
        assert!(adam.step(&mut params, &[Some(&g)]).is_err());
    }
}
