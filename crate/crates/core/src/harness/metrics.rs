use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: usize,
    pub mae: f64,
    pub rmse: f64,
    pub corr: f64,
    /// Set when either series has zero variance; `corr` is then 0.
    pub corr_degenerate: bool,
}

/// Pearson correlation, or `None` when a series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// MAE, RMSE and Pearson correlation in the units of the inputs.
pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::EmptyTargets);
    }
    let n = predictions.len() as f64;
    let mae = predictions.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let rmse = (predictions.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n).sqrt();
    let corr = pearson(predictions, targets);
    Ok(Metrics {
        frames: predictions.len(),
        mae,
        rmse,
        corr: corr.unwrap_or(0.0),
        corr_degenerate: corr.is_none(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let m = metrics(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 10.0]).unwrap();
        assert!((m.mae - 1.0).abs() < 1e-12);
        assert!((m.rmse - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant() {
        let y = [3.0, 1.0, 4.0, 1.0, 5.0];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.mae, m.rmse), (0.0, 0.0));
        assert!((m.corr - 1.0).abs() < 1e-12);
        let c = metrics(&[2.0; 5], &y).unwrap();
        assert!(c.corr_degenerate);
        assert_eq!(c.corr, 0.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(metrics(&[], &[]), Err(Error::EmptyTargets)));
    }
}
