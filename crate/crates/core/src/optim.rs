use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
            .unzip();
        Self { config, m, v, t: 0 }
    }
}

/// One bias-corrected Adam update from each parameter's `grad`.
///
/// Parameters without a gradient buffer are treated as having zero gradient.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(contract!(
            "adam state tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].len() != p.numel() || p.grad.as_ref().is_some_and(|g| g.len() != p.numel()) {
            return Err(contract!("adam moment shape mismatch for parameter {}", i));
        }
    }
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.t as i32;
    let bc1 = 1.0 - libm::powf(beta1, t as f32);
    let bc2 = 1.0 - libm::powf(beta2, t as f32);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = p.grad.as_ref() else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..g.len() {
            let gj = g[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.data[j] -= lr * m_hat / (libm::sqrtf(v_hat) + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [Tensor], max_norm: f32) -> f32 {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum();
    let norm = libm::sqrt(sq) as f32;
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f32, g: f32) -> Tensor {
        let mut t = Tensor::scalar(v).with_grad();
        t.grad = Some(vec![g]);
        t
    }

    #[test]
    fn zero_gradient_leaves_params_and_bumps_step() {
        let mut ps = vec![param(1.25, 0.0), param(-3.0, 0.0)];
        let mut st = AdamState::new(AdamConfig::default(), ps.iter());
        adam_step(&mut ps, &mut st).unwrap();
        assert_eq!(ps[0].data, vec![1.25]);
        assert_eq!(ps[1].data, vec![-3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut ps = vec![param(0.0, 1.0)];
        let mut st = AdamState::new(AdamConfig::with_lr(0.001), ps.iter());
        adam_step(&mut ps, &mut st).unwrap();
        let expected = -0.001f64 * 1.0 / (1.0 + 1e-8);
        assert!((ps[0].data[0] as f64 - expected).abs() < 1e-9);
    }

    #[test]
    fn identical_state_gives_identical_update() {
        let mut a = vec![param(0.3, 0.7)];
        let mut sa = AdamState::new(AdamConfig::default(), a.iter());
        let mut b = a.clone();
        let mut sb = sa.clone();
        adam_step(&mut a, &mut sa).unwrap();
        adam_step(&mut b, &mut sb).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut ps = vec![param(0.0, 1.0)];
        let mut st = AdamState::new(AdamConfig::default(), [].iter());
        assert!(adam_step(&mut ps, &mut st).is_err());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut ps = vec![param(0.0, 3.0), param(0.0, 4.0)];
        let n = clip_grad_norm(&mut ps, 1.0);
        assert!((n - 5.0).abs() < 1e-6);
        assert!((ps[0].grad.as_ref().unwrap()[0] - 0.6).abs() < 1e-6);
    }
}
