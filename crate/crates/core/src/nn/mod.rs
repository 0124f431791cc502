//! A small deterministic layer library with hand-written gradients.
//!
//! Every layer exposes a forward pass that returns whatever it needs for the
//! backward pass, and a backward pass that accumulates into [`Param::grad`]
//! for trainable parameters only.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod convlstm;
pub mod dense;
pub mod dropout;
pub mod norm;
pub mod param;
pub mod resample;
pub mod spec;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, OptimizerState};
pub use checkpoint::Checkpoint;
pub use conv::Conv2d;
pub use convlstm::{ConvLstmCache, ConvLstmCell, RecurrentConvState};
pub use dense::{Activation, Dense};
pub use dropout::Dropout;
pub use norm::{BatchNorm, BatchNormCache};
pub use param::{xavier_init, HasParams, Param};
pub use resample::{resample_grid, Resampler};
pub use spec::{LayerKind, LayerSpec, Padding};
