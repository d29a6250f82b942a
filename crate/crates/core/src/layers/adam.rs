//! Adam optimizer with a per-step exponentially decaying learning rate.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error("non-finite gradient for parameter '{name}'")]
    NonFiniteGradient { name: String },
    #[error("parameter '{name}' has shape {param:?} but its gradient has shape {grad:?}")]
    GradientShape {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("expected {expected} gradients, got {actual}")]
    GradientCount { expected: usize, actual: usize },
}

/// Optimizer hyperparameters. The defaults are the training settings used
/// throughout this crate: starting rate 0.0005 decayed by 0.9999 per step,
/// standard moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr0: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: 0.0005,
            decay: 0.9999,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
///
/// The decay multiplies the learning rate once per optimizer step:
/// `lr_t = lr0 · decay^t` with `t` counting completed calls to [`AdamState::step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments shaped like each parameter.
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// The learning rate that will be applied by the next call to `step`.
    pub fn next_effective_lr(&self) -> f64 {
        self.config.lr0 * self.config.decay.powi(self.step as i32 + 1)
    }

    /// One Adam update over parameters and their gradients, in matching
    /// order. Increments the step counter exactly once.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)], grads: &[Tensor]) -> Result<(), AdamError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(AdamError::GradientCount {
                expected: self.first_moment.len(),
                actual: grads.len(),
            });
        }
        for ((name, param), grad) in params.iter().zip(grads) {
            if param.shape() != grad.shape() {
                return Err(AdamError::GradientShape {
                    name: (*name).to_string(),
                    param: param.shape().to_vec(),
                    grad: grad.shape().to_vec(),
                });
            }
            if !grad.all_finite() {
                return Err(AdamError::NonFiniteGradient {
                    name: (*name).to_string(),
                });
            }
        }

        self.step += 1;
        let t = self.step;
        let c = self.config;
        let lr_t = c.lr0 * c.decay.powi(t as i32);
        let bias1 = 1.0 - c.beta1.powi(t as i32);
        let bias2 = 1.0 - c.beta2.powi(t as i32);

        for (((_, param), grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let p = param.data_mut();
            let g = grad.data();
            let m = m.data_mut();
            let v = v.data_mut();
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr_t * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::from_vec(vec![v])
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_param(0.7);
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        let grads = vec![Tensor::zeros(&[1])];
        state.step(&mut [("p", &mut p)], &grads).unwrap();
        assert_eq!(p.data(), &[0.7]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        // g = 0.1, lr0 = 0.0005: the bias-corrected first step is ≈ −lr·sign(g).
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        let grads = vec![scalar_param(0.1)];
        state.step(&mut [("p", &mut p)], &grads).unwrap();
        assert!(
            (p.data()[0] + 0.0005).abs() < 1e-6,
            "first-step update {} should be ≈ −0.0005",
            p.data()[0]
        );
    }

    #[test]
    fn decay_after_ten_thousand_steps() {
        let config = AdamConfig::default();
        let lr = config.lr0 * config.decay.powi(10_000);
        assert!((lr - 1.839e-4).abs() < 1e-6, "lr after 10000 steps = {lr}");

        // Drive the state counter and confirm the same value falls out.
        let p = scalar_param(0.0);
        let mut state = AdamState::new(config, &[&p]);
        state.step = 9_999;
        assert!((state.next_effective_lr() - lr).abs() < 1e-18);
    }

    #[test]
    fn constant_rate_when_decay_is_one() {
        let config = AdamConfig {
            decay: 1.0,
            ..AdamConfig::default()
        };
        let p = scalar_param(0.0);
        let mut state = AdamState::new(config, &[&p]);
        let lr1 = state.next_effective_lr();
        state.step = 500;
        assert_eq!(lr1, config.lr0);
        assert_eq!(state.next_effective_lr(), config.lr0);
    }

    #[test]
    fn parameters_move_against_gradient_sign_on_first_step() {
        let mut p = Tensor::from_vec(vec![1.0, -1.0, 0.5]);
        let start = p.clone();
        let mut state = AdamState::new(AdamConfig::default(), &[&p]);
        let grads = vec![Tensor::from_vec(vec![0.3, -0.2, 0.05])];
        state.step(&mut [("p", &mut p)], &grads).unwrap();
        for i in 0..3 {
            let moved = p.data()[i] - start.data()[i];
            assert!(moved * grads[0].data()[i] < 0.0, "dim {i} moved with the gradient");
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut a = scalar_param(0.0);
        let mut b = scalar_param(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &[&a, &b]);
        let grads = vec![scalar_param(0.1), scalar_param(f64::NAN)];
        let err = state
            .step(&mut [("layer.alpha", &mut a), ("layer.beta", &mut b)], &grads)
            .unwrap_err();
        assert_eq!(
            err,
            AdamError::NonFiniteGradient {
                name: "layer.beta".into()
            }
        );
    }
}
