//! Convolutional LSTM cell with same-padded gate convolution.
//!
//! Gates are computed by one convolution over `[x, h_prev]` producing
//! `4 * hidden` channels ordered input, forget, candidate, output:
//!
//! ```text
//! i = σ(·)  f = σ(·)  g = tanh(·)  o = σ(·)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::nn::conv::Conv2d;
use crate::nn::dense::sigmoid;
use crate::nn::param::{HasParams, Param};
use crate::nn::spec::LayerSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentConvState {
    pub hidden: FeatureGrid,
    pub cell: FeatureGrid,
}

impl RecurrentConvState {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        RecurrentConvState {
            hidden: FeatureGrid::zeros(height, width, channels),
            cell: FeatureGrid::zeros(height, width, channels),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLstmCache {
    joined: FeatureGrid,
    /// Activated gates, `4 * hidden` channels.
    gates: FeatureGrid,
    cell_prev: FeatureGrid,
    tanh_cell: FeatureGrid,
}

#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub gates: Conv2d,
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvLstmCell {
    pub fn new(
        name: &str,
        (height, width): (usize, usize),
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = LayerSpec::conv(
            (kernel, kernel),
            (1, 1),
            input_channels + hidden_channels,
            4 * hidden_channels,
        )
        .same_padded();
        let mut gates = Conv2d::new(&format!("{name}.gates"), spec, seed)?;
        for b in &mut gates.bias.value[hidden_channels..2 * hidden_channels] {
            *b = 1.0;
        }
        Ok(ConvLstmCell {
            gates,
            input_channels,
            hidden_channels,
            height,
            width,
        })
    }

    pub fn zero_state(&self) -> RecurrentConvState {
        RecurrentConvState::zeros(self.height, self.width, self.hidden_channels)
    }

    pub fn step(
        &self,
        x: &FeatureGrid,
        state: &RecurrentConvState,
    ) -> Result<(FeatureGrid, RecurrentConvState, ConvLstmCache)> {
        let hc = self.hidden_channels;
        x.expect_shape(
            "recurrent-conv input",
            (self.height, self.width, self.input_channels),
        )?;
        let expected = (self.height, self.width, hc);
        if state.hidden.shape() != expected || state.cell.shape() != expected {
            return Err(Error::shape(
                "recurrent-conv state",
                expected,
                (state.hidden.shape(), state.cell.shape()),
            ));
        }
        let joined = x.concat_channels(&state.hidden)?;
        let mut gates = self.gates.forward(&joined)?;
        let mut cell = FeatureGrid::zeros(self.height, self.width, hc);
        let mut tanh_cell = cell.clone();
        let mut hidden = cell.clone();
        for p in 0..self.height * self.width {
            let g = &mut gates.values[p * 4 * hc..(p + 1) * 4 * hc];
            for k in 0..hc {
                g[k] = sigmoid(g[k]);
                g[hc + k] = sigmoid(g[hc + k]);
                g[2 * hc + k] = g[2 * hc + k].tanh();
                g[3 * hc + k] = sigmoid(g[3 * hc + k]);
                let idx = p * hc + k;
                let c = g[hc + k] * state.cell.values[idx] + g[k] * g[2 * hc + k];
                let tc = c.tanh();
                cell.values[idx] = c;
                tanh_cell.values[idx] = tc;
                hidden.values[idx] = g[3 * hc + k] * tc;
            }
        }
        let new_state = RecurrentConvState {
            hidden: hidden.clone(),
            cell,
        };
        let cache = ConvLstmCache {
            joined,
            gates,
            cell_prev: state.cell.clone(),
            tanh_cell,
        };
        Ok((hidden, new_state, cache))
    }

    /// Given gradients flowing into this step's hidden and cell outputs,
    /// returns `(d_input, d_hidden_prev, d_cell_prev)`.
    pub fn backward_step(
        &mut self,
        cache: &ConvLstmCache,
        d_hidden: &FeatureGrid,
        d_cell: &FeatureGrid,
    ) -> (FeatureGrid, FeatureGrid, FeatureGrid) {
        let hc = self.hidden_channels;
        let n = self.height * self.width;
        let mut d_gates = FeatureGrid::zeros(self.height, self.width, 4 * hc);
        let mut d_cell_prev = FeatureGrid::zeros(self.height, self.width, hc);
        for p in 0..n {
            let g = &cache.gates.values[p * 4 * hc..(p + 1) * 4 * hc];
            let dg = &mut d_gates.values[p * 4 * hc..(p + 1) * 4 * hc];
            for k in 0..hc {
                let idx = p * hc + k;
                let (i, f, cand, o) = (g[k], g[hc + k], g[2 * hc + k], g[3 * hc + k]);
                let tc = cache.tanh_cell.values[idx];
                let dh = d_hidden.values[idx];
                let dc = d_cell.values[idx] + dh * o * (1.0 - tc * tc);
                dg[k] = dc * cand * i * (1.0 - i);
                dg[hc + k] = dc * cache.cell_prev.values[idx] * f * (1.0 - f);
                dg[2 * hc + k] = dc * i * (1.0 - cand * cand);
                dg[3 * hc + k] = dh * tc * o * (1.0 - o);
                d_cell_prev.values[idx] = dc * f;
            }
        }
        let d_joined = self
            .gates
            .backward(&cache.joined, &d_gates, true)
            .expect("input gradient requested");
        let d_x = d_joined
            .slice_channels(0, self.input_channels)
            .expect("joined channels");
        let d_h = d_joined
            .slice_channels(self.input_channels, self.input_channels + hc)
            .expect("joined channels");
        (d_x, d_h, d_cell_prev)
    }
}

impl HasParams for ConvLstmCell {
    fn params(&self) -> Vec<&Param> {
        self.gates.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.gates.params_mut()
    }
}
