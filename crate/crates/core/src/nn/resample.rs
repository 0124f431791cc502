//! Bilinear resampling with half-pixel centres and edge clamping.

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = if src == dst {
                i as f64
            } else {
                ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64)
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Precomputed bilinear plan between two spatial sizes.
#[derive(Clone, Debug)]
pub struct Resampler {
    pub src: (usize, usize),
    pub dst: (usize, usize),
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl Resampler {
    pub fn new(src: (usize, usize), dst: (usize, usize)) -> Result<Self> {
        if src.0 == 0 || src.1 == 0 || dst.0 == 0 || dst.1 == 0 {
            return Err(Error::shape("resample sizes", "positive", (src, dst)));
        }
        Ok(Resampler {
            src,
            dst,
            rows: axis_taps(src.0, dst.0),
            cols: axis_taps(src.1, dst.1),
        })
    }

    /// Resamples from an arbitrary source accessor `fetch(y, x, c)`.
    pub fn apply_with(&self, channels: usize, fetch: impl Fn(usize, usize, usize) -> f64) -> FeatureGrid {
        let mut out = FeatureGrid::zeros(self.dst.0, self.dst.1, channels);
        let mut i = 0;
        for r in &self.rows {
            for cl in &self.cols {
                for c in 0..channels {
                    let top = fetch(r.lo, cl.lo, c) * (1.0 - cl.frac) + fetch(r.lo, cl.hi, c) * cl.frac;
                    let bottom = fetch(r.hi, cl.lo, c) * (1.0 - cl.frac) + fetch(r.hi, cl.hi, c) * cl.frac;
                    out.values[i] = top * (1.0 - r.frac) + bottom * r.frac;
                    i += 1;
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &FeatureGrid) -> Result<FeatureGrid> {
        if (x.height, x.width) != self.src {
            return Err(Error::shape("resample input", self.src, (x.height, x.width)));
        }
        if self.src == self.dst {
            return Ok(x.clone());
        }
        Ok(self.apply_with(x.channels, |y, xx, c| x.get(y, xx, c)))
    }

    pub fn backward(&self, grad_out: &FeatureGrid) -> FeatureGrid {
        let ch = grad_out.channels;
        let mut g = FeatureGrid::zeros(self.src.0, self.src.1, ch);
        if self.src == self.dst {
            g.values.copy_from_slice(&grad_out.values);
            return g;
        }
        let mut i = 0;
        for r in &self.rows {
            for cl in &self.cols {
                for c in 0..ch {
                    let go = grad_out.values[i];
                    i += 1;
                    let w = [
                        (r.lo, cl.lo, (1.0 - r.frac) * (1.0 - cl.frac)),
                        (r.lo, cl.hi, (1.0 - r.frac) * cl.frac),
                        (r.hi, cl.lo, r.frac * (1.0 - cl.frac)),
                        (r.hi, cl.hi, r.frac * cl.frac),
                    ];
                    for (y, x, wt) in w {
                        let idx = g.index(y, x, c);
                        g.values[idx] += go * wt;
                    }
                }
            }
        }
        g
    }

    /// Output values produced; the FLOPs counter charges a fixed cost per value.
    pub fn output_values(&self, channels: usize) -> usize {
        self.dst.0 * self.dst.1 * channels
    }
}

pub fn resample_grid(x: &FeatureGrid, target: (usize, usize)) -> Result<FeatureGrid> {
    Resampler::new((x.height, x.width), target)?.forward(x)
}
