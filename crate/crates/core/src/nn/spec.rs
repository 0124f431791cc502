use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d,
    FullyConnected,
    BatchNorm,
    Dropout,
    RecurrentConvCell,
    Upsample,
    Downsample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    #[default]
    Valid,
    /// Output size equals input size; stride must be 1 and kernels odd.
    Same,
}

/// Static description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default = "one_by_one")]
    pub kernel: (usize, usize),
    #[serde(default = "one_by_one")]
    pub stride: (usize, usize),
    #[serde(default)]
    pub in_channels: usize,
    #[serde(default)]
    pub out_channels: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "yes")]
    pub trainable: bool,
    #[serde(default)]
    pub padding: Padding,
}

fn one_by_one() -> (usize, usize) {
    (1, 1)
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn conv(kernel: (usize, usize), stride: (usize, usize), in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            kernel,
            stride,
            in_channels,
            out_channels,
            dropout_rate: 0.0,
            trainable: true,
            padding: Padding::Valid,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn same_padded(mut self) -> Self {
        self.padding = Padding::Same;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Config(format!(
                "kernel {:?} and stride {:?} must be positive",
                self.kernel, self.stride
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1]",
                self.dropout_rate
            )));
        }
        if self.padding == Padding::Same
            && (self.stride != (1, 1) || self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0)
        {
            return Err(Error::Config(
                "same padding needs stride 1 and odd kernels".into(),
            ));
        }
        Ok(())
    }

    /// Spatial output size for conv-like layers.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Same => Ok((h, w)),
            Padding::Valid => {
                if h < self.kernel.0 || w < self.kernel.1 {
                    return Err(Error::shape(
                        "valid convolution input",
                        format!(">= {:?}", self.kernel),
                        (h, w),
                    ));
                }
                Ok((
                    (h - self.kernel.0) / self.stride.0 + 1,
                    (w - self.kernel.1) / self.stride.1 + 1,
                ))
            }
        }
    }
}
