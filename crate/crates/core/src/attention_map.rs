use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_ROWS: usize = 9;
pub const GRID_COLS: usize = 16;
pub const GRID_CELLS: usize = GRID_ROWS * GRID_COLS;

/// A probability distribution over the 9×16 gaze grid, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub frame: usize,
    pub probs: Vec<f64>,
}

impl AttentionMap {
    pub fn uniform(frame: usize) -> Self {
        AttentionMap {
            frame,
            probs: vec![1.0 / GRID_CELLS as f64; GRID_CELLS],
        }
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(frame: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != GRID_CELLS {
            return Err(Error::shape("attention map", GRID_CELLS, weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Distribution("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Distribution("all-zero attention map".into()));
        }
        Ok(AttentionMap {
            frame,
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * GRID_COLS + col]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != GRID_CELLS {
            return Err(Error::shape("attention map", GRID_CELLS, self.probs.len()));
        }
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Distribution("negative or non-finite probability".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Distribution(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        (best / GRID_COLS, best % GRID_COLS)
    }

    /// KL(self ‖ other), with `0 log 0 = 0`.
    pub fn kl_divergence(&self, other: &AttentionMap) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p / q.max(1e-300)).ln())
            .sum()
    }
}
