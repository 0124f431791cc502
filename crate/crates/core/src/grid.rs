//! Dense `height × width × channels` arrays in row-major `(h, w, c)` order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        FeatureGrid {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::shape(
                "FeatureGrid::from_vec",
                height * width * channels,
                values.len(),
            ));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    values.push(f(y, x, c));
                }
            }
        }
        FeatureGrid {
            height,
            width,
            channels,
            values,
        }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.values[i] = v;
    }

    /// Channel vector at one spatial cell.
    #[inline]
    pub fn cell(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn expect_shape(&self, context: &str, shape: (usize, usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::shape(context, shape, self.shape()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis, `self` first.
    pub fn concat_channels(&self, other: &FeatureGrid) -> Result<FeatureGrid> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                "concat_channels",
                (self.height, self.width),
                (other.height, other.width),
            ));
        }
        let c = self.channels + other.channels;
        let mut values = Vec::with_capacity(self.height * self.width * c);
        for (a, b) in self
            .values
            .chunks_exact(self.channels.max(1))
            .zip(other.values.chunks_exact(other.channels.max(1)))
        {
            values.extend_from_slice(&a[..self.channels]);
            values.extend_from_slice(&b[..other.channels]);
        }
        FeatureGrid::from_vec(self.height, self.width, c, values)
    }

    /// Channels `[start, end)` as a new grid.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<FeatureGrid> {
        if start > end || end > self.channels {
            return Err(Error::shape("slice_channels", self.channels, (start, end)));
        }
        let mut values = Vec::with_capacity(self.height * self.width * (end - start));
        for cell in self.values.chunks_exact(self.channels) {
            values.extend_from_slice(&cell[start..end]);
        }
        FeatureGrid::from_vec(self.height, self.width, end - start, values)
    }

    pub fn add_assign(&mut self, other: &FeatureGrid) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}
