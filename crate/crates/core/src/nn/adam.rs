use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::param::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments keyed by parameter name.
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update using each parameter's accumulated `grad`.
/// Frozen parameters are skipped.
pub fn adam_step(params: &mut [&mut Param], state: &mut OptimizerState) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for p in params.iter_mut().filter(|p| p.trainable) {
        if p.grad.len() != p.value.len() {
            return Err(Error::shape(format!("gradient of {}", p.name), p.value.len(), p.grad.len()));
        }
        let (m, v) = state
            .moments
            .entry(p.name.clone())
            .or_insert_with(|| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
        if m.len() != p.value.len() {
            return Err(Error::shape(format!("moments of {}", p.name), p.value.len(), m.len()));
        }
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.value[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Rescales trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for p in params.iter_mut().filter(|p| p.trainable) {
            p.grad.iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(grad: f64) -> Param {
        let mut p = Param::new("p", vec![3], vec![0.5, -1.0, 2.0], true);
        p.grad = vec![grad; 3];
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(0.0);
        let mut s = OptimizerState::new(AdamConfig::default());
        adam_step(&mut [&mut p], &mut s).unwrap();
        assert_eq!(p.value, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.25] {
            let mut p = param(g);
            let before = p.value.clone();
            let mut s = OptimizerState::new(AdamConfig::default());
            adam_step(&mut [&mut p], &mut s).unwrap();
            for (a, b) in p.value.iter().zip(before) {
                assert!(((a - b) + 1e-3 * g.signum()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut a = param(0.7);
        let mut b = param(0.7);
        let mut sa = OptimizerState::new(AdamConfig::default());
        let mut sb = sa.clone();
        for _ in 0..3 {
            adam_step(&mut [&mut a], &mut sa).unwrap();
            adam_step(&mut [&mut b], &mut sb).unwrap();
        }
        assert_eq!(a.value, b.value);
        assert_eq!(sa, sb);
    }

    #[test]
    fn frozen_params_skipped() {
        let mut p = param(1.0);
        p.trainable = false;
        let mut s = OptimizerState::new(AdamConfig::default());
        adam_step(&mut [&mut p], &mut s).unwrap();
        assert_eq!(p.value, vec![0.5, -1.0, 2.0]);
    }
}
