use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::dot;
use crate::nn::param::{HasParams, Param};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully-connected layer, weights `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize, activation: Activation, trainable: bool, seed: u64) -> Self {
        Dense {
            weight: Param::xavier(format!("{name}.weight"), vec![outputs, inputs], trainable, seed),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs], trainable),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.inputs();
        if x.len() != n {
            return Err(Error::shape("fully-connected input", n, x.len()));
        }
        Ok(self
            .weight
            .value
            .chunks_exact(n)
            .zip(&self.bias.value)
            .map(|(row, b)| self.activation.apply(dot(row, x) + b))
            .collect())
    }

    /// `y` is this layer's forward output for input `x`.
    pub fn backward(&mut self, x: &[f64], y: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let n = self.inputs();
        let mut grad_in = vec![0.0; n];
        for (o, (&go, &yo)) in grad_out.iter().zip(y).enumerate() {
            let d = go * self.activation.derivative_from_output(yo);
            if d == 0.0 {
                continue;
            }
            let row = &self.weight.value[o * n..(o + 1) * n];
            for (gi, w) in grad_in.iter_mut().zip(row) {
                *gi += d * w;
            }
            if self.weight.trainable {
                self.bias.grad[o] += d;
                for (gw, xv) in self.weight.grad[o * n..(o + 1) * n].iter_mut().zip(x) {
                    *gw += d * xv;
                }
            }
        }
        grad_in
    }
}

impl HasParams for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn identity_weights() {
        let mut d = Dense::new("fc", 3, 3, Activation::Linear, true, 0);
        d.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(d.forward(&[1.5, -2.0, 3.0]).unwrap(), vec![1.5, -2.0, 3.0]);
    }

    #[test]
    fn zero_weights_give_activated_bias() {
        let mut d = Dense::new("fc", 4, 2, Activation::Tanh, true, 0);
        d.weight.value.iter_mut().for_each(|w| *w = 0.0);
        d.bias.value = vec![0.3, -1.2];
        let y = d.forward(&[9.0, 9.0, 9.0, 9.0]).unwrap();
        assert_eq!(y, vec![0.3f64.tanh(), (-1.2f64).tanh()]);
    }

    #[test]
    fn matches_matmul_oracle() {
        let mut rng = seed::rng(5);
        let mut d = Dense::new("fc", 8, 3, Activation::Linear, true, 9);
        d.bias.value = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = d.forward(&x).unwrap();
        for o in 0..3 {
            let mut s = d.bias.value[o];
            for i in 0..8 {
                s += d.weight.value[o * 8 + i] * x[i];
            }
            assert!((y[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        let d = Dense::new("fc", 4, 2, Activation::Relu, true, 0);
        assert!(d.forward(&[1.0; 5]).is_err());
    }
}
