use rand::Rng as _;

use crate::grid::FeatureGrid;
use crate::seed::Rng;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` at training
/// time so evaluation is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Dropout { rate }
    }

    /// Returns the output and the per-value multiplier (0 or `1/(1-rate)`).
    pub fn forward_train(&self, x: &FeatureGrid, rng: &mut Rng) -> (FeatureGrid, Vec<f64>) {
        if self.rate <= 0.0 {
            return (x.clone(), vec![1.0; x.len()]);
        }
        let keep = 1.0 - self.rate;
        let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.values.iter_mut().zip(&mask) {
            *v *= m;
        }
        (y, mask)
    }

    pub fn backward(mask: &[f64], grad: &FeatureGrid) -> FeatureGrid {
        let mut g = grad.clone();
        for (v, m) in g.values.iter_mut().zip(mask) {
            *v *= m;
        }
        g
    }
}
