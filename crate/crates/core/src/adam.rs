//! Adam with bias correction over a flat list of parameter tensors.

use alloc::string::String;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::{lit, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), AdamError> {
        let ok = self.lr >= 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(AdamError::BadConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdamError {
    BadConfig,
    /// Parameter/gradient/state lists disagree in length or shape.
    ShapeMismatch { index: usize },
    /// The gradient for the named parameter contains NaN or Inf; the whole
    /// update is aborted, no parameter was touched.
    NonFiniteGrad { name: String },
}

impl fmt::Display for AdamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdamError::BadConfig => write!(f, "learning rate, betas, or epsilon out of range"),
            AdamError::ShapeMismatch { index } => {
                write!(f, "parameter {index}: gradient/state shape mismatch")
            }
            AdamError::NonFiniteGrad { name } => {
                write!(f, "non-finite gradient for parameter '{name}'; update aborted")
            }
        }
    }
}

impl core::error::Error for AdamError {}

/// First and second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
            step: 0,
        }
    }
}

/// One Adam update: `theta -= lr * m_hat / (sqrt(v_hat) + eps)` with
/// `m_hat = m / (1 - beta1^t)`, `v_hat = v / (1 - beta2^t)`.
///
/// Gradients are checked for finiteness up front, so a failed call leaves
/// parameters and state untouched. `names` labels parameters in error
/// reports.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    names: &[&str],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), AdamError> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AdamError::ShapeMismatch { index: params.len() });
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.shape() != g.shape() {
            return Err(AdamError::ShapeMismatch { index: i });
        }
        if !g.all_finite() {
            let name = names.get(i).copied().unwrap_or("?").to_string();
            return Err(AdamError::NonFiniteGrad { name });
        }
    }

    let t = state.step + 1;
    let b1: T = lit(cfg.beta1);
    let b2: T = lit(cfg.beta2);
    let lr: T = lit(cfg.lr);
    let eps: T = lit(cfg.eps);
    let c1 = T::one() - lit::<T>(cfg.beta1).powi(t as i32);
    let c2 = T::one() - lit::<T>(cfg.beta2).powi(t as i32);

    for i in 0..params.len() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params[i].data_mut();
        let g = grads[i].data();
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_setup(theta: f64) -> (Vec<Tensor<f64>>, AdamState<f64>, AdamConfig) {
        let params = vec![Tensor::scalar(theta)];
        let state = AdamState::new(&params);
        (params, state, AdamConfig::default())
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        for &g in &[3.0, -0.2, 1e-4] {
            let (mut params, mut state, cfg) = scalar_setup(1.0);
            let grads = vec![Tensor::scalar(g)];
            adam_step(&mut params, &grads, &["w"], &mut state, &cfg).unwrap();
            let delta = params[0].item() - 1.0;
            let expect = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((delta - expect).abs() < 1e-12, "g={g}: {delta} vs {expect}");
        }
    }

    #[test]
    fn zero_grad_leaves_params_fixed() {
        let (mut params, mut state, cfg) = scalar_setup(0.7);
        let grads = vec![Tensor::scalar(0.0)];
        for _ in 0..3 {
            adam_step(&mut params, &grads, &["w"], &mut state, &cfg).unwrap();
        }
        assert_eq!(params[0].item(), 0.7);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn two_steps_on_quadratic_match_hand_trajectory() {
        // f(theta) = theta^2, grad = 2*theta, starting at theta = 1.
        let (mut params, mut state, cfg) = scalar_setup(1.0);
        let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);

        let mut theta = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2u32 {
            let g = 2.0 * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);

            let g_t = vec![Tensor::scalar(2.0 * params[0].item())];
            adam_step(&mut params, &g_t, &["w"], &mut state, &cfg).unwrap();
            assert!((params[0].item() - theta).abs() < 1e-15, "step {t}");
        }
    }

    #[test]
    fn non_finite_grad_names_parameter_and_aborts() {
        let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let mut state = AdamState::new(&params);
        let grads = vec![Tensor::scalar(0.5), Tensor::scalar(f64::NAN)];
        let err = adam_step(
            &mut params,
            &grads,
            &["conv1.w", "lstm.fw.b_i"],
            &mut state,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, AdamError::NonFiniteGrad { name: "lstm.fw.b_i".into() });
        // Nothing moved, not even the first (finite-grad) parameter.
        assert_eq!(params[0].item(), 1.0);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn zero_lr_freezes_params_for_any_grad() {
        let (mut params, mut state, mut cfg) = scalar_setup(0.3);
        cfg.lr = 0.0;
        let grads = vec![Tensor::scalar(123.4)];
        adam_step(&mut params, &grads, &["w"], &mut state, &cfg).unwrap();
        assert_eq!(params[0].item(), 0.3);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { eps: 0.0, ..AdamConfig::default() }.validate().is_err());
    }
}
