//! Batch normalization over a batch of grids: statistics per channel across
//! every frame and spatial cell of the batch.

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::nn::param::{HasParams, Param};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    /// Running statistics; never receive gradients.
    pub running_mean: Param,
    pub running_var: Param,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Vec<FeatureGrid>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize, trainable: bool) -> Self {
        BatchNorm {
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels], trainable),
            beta: Param::zeros(format!("{name}.beta"), vec![channels], trainable),
            running_mean: Param::zeros(format!("{name}.running_mean"), vec![channels], false),
            running_var: Param::new(
                format!("{name}.running_var"),
                vec![channels],
                vec![1.0; channels],
                false,
            ),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, xs: &[FeatureGrid]) -> Result<()> {
        for x in xs {
            if x.channels != self.channels() {
                return Err(Error::shape("batch-norm channels", self.channels(), x.channels));
            }
        }
        if xs.is_empty() {
            return Err(Error::shape("batch-norm batch", "non-empty", 0));
        }
        Ok(())
    }

    pub fn forward_eval(&self, xs: &[FeatureGrid]) -> Result<Vec<FeatureGrid>> {
        self.check(xs)?;
        let c = self.channels();
        let scale: Vec<f64> = (0..c)
            .map(|k| self.gamma.value[k] / (self.running_var.value[k] + BN_EPSILON).sqrt())
            .collect();
        Ok(xs
            .iter()
            .map(|x| {
                let mut y = x.clone();
                for cell in y.values.chunks_exact_mut(c) {
                    for k in 0..c {
                        cell[k] = (cell[k] - self.running_mean.value[k]) * scale[k] + self.beta.value[k];
                    }
                }
                y
            })
            .collect())
    }

    /// Training-mode forward; updates running statistics unless frozen.
    pub fn forward_train(&mut self, xs: &[FeatureGrid]) -> Result<(Vec<FeatureGrid>, BatchNormCache)> {
        self.check(xs)?;
        let c = self.channels();
        let count: usize = xs.iter().map(|x| x.height * x.width).sum();
        let mut mean = vec![0.0; c];
        for x in xs {
            for cell in x.values.chunks_exact(c) {
                for k in 0..c {
                    mean[k] += cell[k];
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; c];
        for x in xs {
            for cell in x.values.chunks_exact(c) {
                for k in 0..c {
                    var[k] += (cell[k] - mean[k]).powi(2);
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

        let mut normalized = Vec::with_capacity(xs.len());
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let mut n = x.clone();
            let mut y = x.clone();
            for (nc, yc) in n.values.chunks_exact_mut(c).zip(y.values.chunks_exact_mut(c)) {
                for k in 0..c {
                    nc[k] = (nc[k] - mean[k]) * inv_std[k];
                    yc[k] = nc[k] * self.gamma.value[k] + self.beta.value[k];
                }
            }
            normalized.push(n);
            out.push(y);
        }
        if self.gamma.trainable {
            for k in 0..c {
                self.running_mean.value[k] =
                    BN_MOMENTUM * self.running_mean.value[k] + (1.0 - BN_MOMENTUM) * mean[k];
                self.running_var.value[k] =
                    BN_MOMENTUM * self.running_var.value[k] + (1.0 - BN_MOMENTUM) * var[k];
            }
        }
        Ok((out, BatchNormCache { normalized, inv_std }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache, grads: &[FeatureGrid]) -> Vec<FeatureGrid> {
        let c = self.channels();
        let count: f64 = grads.iter().map(|g| (g.height * g.width) as f64).sum();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (g, n) in grads.iter().zip(&cache.normalized) {
            for (gc, nc) in g.values.chunks_exact(c).zip(n.values.chunks_exact(c)) {
                for k in 0..c {
                    sum_g[k] += gc[k];
                    sum_gx[k] += gc[k] * nc[k];
                }
            }
        }
        if self.gamma.trainable {
            for k in 0..c {
                self.gamma.grad[k] += sum_gx[k];
                self.beta.grad[k] += sum_g[k];
            }
        }
        grads
            .iter()
            .zip(&cache.normalized)
            .map(|(g, n)| {
                let mut gi = g.clone();
                for (gc, nc) in gi.values.chunks_exact_mut(c).zip(n.values.chunks_exact(c)) {
                    for k in 0..c {
                        let scale = self.gamma.value[k] * cache.inv_std[k] / count;
                        gc[k] = scale * (count * gc[k] - sum_g[k] - nc[k] * sum_gx[k]);
                    }
                }
                gi
            })
            .collect()
    }
}

impl HasParams for BatchNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_is_standardized() {
        let mut bn = BatchNorm::new("bn", 2, true);
        let xs: Vec<FeatureGrid> = (0..3)
            .map(|i| FeatureGrid::from_fn(2, 2, 2, |y, x, c| (i * 7 + y * 3 + x) as f64 * (c + 1) as f64))
            .collect();
        let (ys, _) = bn.forward_train(&xs).unwrap();
        for k in 0..2 {
            let vals: Vec<f64> = ys.iter().flat_map(|y| y.values.iter().skip(k).step_by(2).copied()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
        assert!(bn.running_mean.value[0] > 0.0);
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut bn = BatchNorm::new("bn", 1, true);
        bn.running_mean.value = vec![2.0];
        bn.running_var.value = vec![4.0 - BN_EPSILON];
        let y = bn.forward_eval(&[FeatureGrid::filled(1, 1, 1, 6.0)]).unwrap();
        assert!((y[0].values[0] - 2.0).abs() < 1e-12);
    }
}
