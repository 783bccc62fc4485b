//! Bias-corrected adaptive-moment parameter updates (Adam, zero weight
//! decay).

use crate::{Error, Result};

/// Optimizer hyperparameters. Defaults: beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8, lr = 1e-5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment estimates plus the step counter for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_len: usize) -> Self {
        Self {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update: m/v moment tracking, bias correction, then
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamParams,
) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step",
            expected: params.len(),
            got: grad.len(),
        });
    }
    if cfg.lr <= 0.0 {
        return Err(Error::Config("adam learning rate must be positive".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![0.5, -1.5, 2.0];
        let before = params.clone();
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0; 3], &mut state, &AdamParams::default()).unwrap();
        adam_step(&mut params, &[0.0; 3], &mut state, &AdamParams::default()).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_matches_scalar_hand_computation() {
        // Hand-rolled first update for one scalar parameter:
        //   m = (1-b1) g, v = (1-b2) g^2
        //   m_hat = g, v_hat = g^2
        //   delta = -lr * g / (|g| + eps)
        let (g, lr, beta1, beta2, eps) = (0.25f64, 1e-3, 0.9, 0.999, 1e-8);
        let m = (1.0 - beta1) * g;
        let v = (1.0 - beta2) * g * g;
        let m_hat = m / (1.0 - beta1);
        let v_hat = v / (1.0 - beta2);
        let expected = 1.0 - lr * m_hat / (v_hat.sqrt() + eps);
        // Closed form for the first step.
        assert!((expected - (1.0 - lr * g / (g.abs() + eps))).abs() < 1e-15);

        let mut params = vec![1.0];
        let mut state = AdamState::new(1);
        let cfg = AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        };
        adam_step(&mut params, &[g], &mut state, &cfg).unwrap();
        assert!((params[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn defaults_match_training_configuration() {
        let cfg = AdamParams::default();
        assert_eq!(cfg.beta1, 0.9);
        assert_eq!(cfg.beta2, 0.999);
        assert_eq!(cfg.eps, 1e-8);
        assert_eq!(cfg.lr, 1e-5);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let mut params = vec![1.0, 2.0];
        let mut state = AdamState::new(2);
        let err = adam_step(&mut params, &[1.0], &mut state, &AdamParams::default());
        assert!(err.is_err());
    }

    #[test]
    fn second_step_uses_bias_correction() {
        // Two steps with constant gradient, checked against a straight-line
        // recomputation of the recurrences.
        let g = -0.4f64;
        let cfg = AdamParams {
            lr: 0.01,
            ..AdamParams::default()
        };
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[g], &mut state, &cfg).unwrap();
        adam_step(&mut params, &[g], &mut state, &cfg).unwrap();

        let mut p = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        assert!((params[0] - p).abs() < 1e-15);
    }
}
