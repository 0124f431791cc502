//! Feature fusion and speed prediction: fovea insertion and concatenation,
//! the combined / dual / periphery-only planners, and full-model assembly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention_map::{AttentionMap, GRID_COLS, GRID_ROWS};
use crate::encoders::{
    crop_and_resize_patch, foveal_encoder, preprocess_peripheral, Backbone, ConvHead, EncoderSpecs, FoveaMode,
    HeadCache, PeripheralEncoder, FEATURE_CHANNELS, FOVEA_PATCH_COMBINED, PERIPHERAL_HEAD_OUT,
};
use crate::error::{Error, Result};
use crate::fovea::{select_cells, Cell, FoveaGeometry, FoveaPlacement, FoveaPolicy, FoveaSelectionConfig, PATCH_CELLS};
use crate::grid::FeatureGrid;
use crate::nn::{
    Activation, Checkpoint, ConvLstmCache, ConvLstmCell, Dense, HasParams, Param, RecurrentConvState,
};
use crate::seed::{derive_seed, Rng};
use crate::world::Frame;

const NO_SOURCE: u32 = u32::MAX;

/// Result of writing fovea patches into the zero grid, with the patch that
/// supplied each value (for routing gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct Insertion {
    pub grid: FeatureGrid,
    source: Vec<u32>,
}

fn check_corner(corner: Cell, side: usize) -> Result<()> {
    if corner.0 + side > GRID_ROWS || corner.1 + side > GRID_COLS {
        return Err(Error::shape("fovea insertion corner", (GRID_ROWS - side, GRID_COLS - side), corner));
    }
    Ok(())
}

/// Writes each 3×3 patch at its corner into a zero 9×16 grid, keeping the
/// elementwise maximum where patches overlap.
pub fn insert_fovea_features(patches: &[FeatureGrid], corners: &[Cell]) -> Result<Insertion> {
    if patches.len() != corners.len() {
        return Err(Error::shape("fovea corners", patches.len(), corners.len()));
    }
    let c = patches.first().map_or(FEATURE_CHANNELS, |p| p.channels);
    let mut grid = FeatureGrid::zeros(GRID_ROWS, GRID_COLS, c);
    let mut source = vec![NO_SOURCE; grid.len()];
    for (k, (p, &corner)) in patches.iter().zip(corners).enumerate() {
        p.expect_shape("fovea feature patch", (PATCH_CELLS, PATCH_CELLS, c))?;
        check_corner(corner, PATCH_CELLS)?;
        for y in 0..PATCH_CELLS {
            for x in 0..PATCH_CELLS {
                for ch in 0..c {
                    let v = p.get(y, x, ch);
                    let idx = grid.index(corner.0 + y, corner.1 + x, ch);
                    if source[idx] == NO_SOURCE || v > grid.values[idx] {
                        grid.values[idx] = v;
                        source[idx] = k as u32;
                    }
                }
            }
        }
    }
    Ok(Insertion { grid, source })
}

impl Insertion {
    /// Routes the gradient of the inserted grid back to the patches.
    pub fn backward(&self, grad: &FeatureGrid, corners: &[Cell]) -> Vec<FeatureGrid> {
        let c = grad.channels;
        let mut out = vec![FeatureGrid::zeros(PATCH_CELLS, PATCH_CELLS, c); corners.len()];
        for (idx, &src) in self.source.iter().enumerate() {
            if src == NO_SOURCE {
                continue;
            }
            let k = src as usize;
            let ch = idx % c;
            let cell = idx / c;
            let (gy, gx) = (cell / GRID_COLS, cell % GRID_COLS);
            let (y, x) = (gy - corners[k].0, gx - corners[k].1);
            out[k].set(y, x, ch, grad.values[idx]);
        }
        out
    }
}

/// Channel concatenation, peripheral channels first.
pub fn concat_features(peripheral: &FeatureGrid, foveal: &FeatureGrid) -> Result<FeatureGrid> {
    peripheral.expect_shape("peripheral features", (GRID_ROWS, GRID_COLS, peripheral.channels))?;
    peripheral.concat_channels(foveal)
}

/// Sinusoidal encoding of a grid position: the first `k/2` entries encode
/// the row, the rest the column, alternating sin / cos with frequencies
/// `10000^(-2m/(k/2))`.
pub fn positional_encoding(cell: Cell, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs even channels, got {k}")));
    }
    let d = k / 2;
    let mut out = Vec::with_capacity(k);
    for pos in [cell.0 as f64, cell.1 as f64] {
        for e in 0..d {
            let omega = 10000f64.powf(-((2 * (e / 2)) as f64) / d as f64);
            out.push(if e % 2 == 0 { (pos * omega).sin() } else { (pos * omega).cos() });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerVariant {
    Combined,
    Dual,
    PeripheryOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: PlannerVariant,
    pub scale: usize,
    /// Full frame size the model consumes.
    pub frame: (usize, usize),
    pub fovea: Option<FoveaSelectionConfig>,
    pub encoders: EncoderSpecs,
    pub backbone_seed: u64,
    pub recurrent_hidden: usize,
    pub recurrent_kernel: usize,
    pub fc_widths: Vec<usize>,
    pub horizon: usize,
    /// Predictions are `speed_offset + speed_scale * output`.
    pub speed_offset: f64,
    pub speed_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: PlannerVariant, scale: usize, fovea: Option<FoveaSelectionConfig>, seed: u64) -> Result<Self> {
        let cfg = ModelConfig {
            variant,
            scale,
            frame: (720 / scale.max(1), 1280 / scale.max(1)),
            fovea,
            encoders: EncoderSpecs::for_scale(scale)?,
            backbone_seed: 0,
            recurrent_hidden: 8,
            recurrent_kernel: 3,
            fc_widths: vec![64, 32, 16, 1],
            horizon: 10,
            speed_offset: 0.0,
            speed_scale: 1.0,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `none` gives the periphery-only model, every other policy the
    /// combined planner.
    pub fn for_policy(scale: usize, policy: FoveaPolicy, seed: u64) -> Result<Self> {
        if policy == FoveaPolicy::None {
            return Self::new(PlannerVariant::PeripheryOnly, scale, None, seed);
        }
        let fovea = FoveaSelectionConfig::new(policy, 240 / scale.max(1), derive_seed(seed, "fovea"));
        Self::new(PlannerVariant::Combined, scale, Some(fovea), seed)
    }

    pub fn peripheral_input(&self) -> (usize, usize) {
        self.encoders.preproc.peripheral
    }

    pub fn fovea_mode(&self) -> Option<FoveaMode> {
        match self.variant {
            PlannerVariant::Combined => Some(FoveaMode::Combined),
            PlannerVariant::Dual => Some(FoveaMode::Dual),
            PlannerVariant::PeripheryOnly => None,
        }
    }

    pub fn fovea_count(&self) -> usize {
        match (&self.fovea, self.variant) {
            (_, PlannerVariant::PeripheryOnly) => 0,
            (Some(f), _) => f.count,
            (None, _) => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one frame".into()));
        }
        if self.fc_widths.len() != 4 || self.fc_widths.last() != Some(&1) || self.fc_widths.contains(&0) {
            return Err(Error::Config(format!(
                "fc widths {:?}: need four positive layers ending in 1",
                self.fc_widths
            )));
        }
        if self.recurrent_hidden == 0 || self.recurrent_kernel % 2 == 0 {
            return Err(Error::Config("recurrent layer needs hidden channels and an odd kernel".into()));
        }
        if !(self.speed_scale > 0.0) || !self.speed_offset.is_finite() {
            return Err(Error::Config("speed scale must be positive".into()));
        }
        self.encoders.preproc.validate()?;
        match (self.variant, &self.fovea) {
            (PlannerVariant::PeripheryOnly, Some(_)) => {
                return Err(Error::Config("periphery-only model takes no fovea policy".into()))
            }
            (PlannerVariant::Combined | PlannerVariant::Dual, None) => {
                return Err(Error::Config("fovea planner needs a fovea policy".into()))
            }
            (PlannerVariant::Combined | PlannerVariant::Dual, Some(f)) => {
                if f.policy == FoveaPolicy::None {
                    return Err(Error::Config("fovea policy none requires the periphery-only variant".into()));
                }
                f.validate(self.frame)?;
                if f.patch_px != self.encoders.preproc.patch_crop {
                    return Err(Error::Config(format!(
                        "fovea patch {} differs from encoder crop {}",
                        f.patch_px, self.encoders.preproc.patch_crop
                    )));
                }
            }
            (PlannerVariant::PeripheryOnly, None) => {}
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let cfg: ModelConfig = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every intermediate shape of a model, from frame to fused features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub frame: (usize, usize),
    pub peripheral_input: (usize, usize, usize),
    pub peripheral_backbone: (usize, usize, usize),
    pub peripheral_head: (usize, usize, usize),
    pub peripheral_grid: (usize, usize, usize),
    pub patch_crop: Option<(usize, usize)>,
    pub patch_input: Option<(usize, usize, usize)>,
    pub foveal_backbone: Option<(usize, usize, usize)>,
    pub foveal_patch: Option<(usize, usize, usize)>,
    /// Combined: the fused 9×16 grid. Dual: the stacked foveal input.
    pub fused: (usize, usize, usize),
}

/// Fully-connected stack: ReLU on every layer but the last, which is linear.
#[derive(Clone, Debug)]
pub struct FcStack {
    pub layers: Vec<Dense>,
}

impl FcStack {
    pub fn new(name: &str, inputs: usize, widths: &[usize], seed: u64) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut n = inputs;
        for (i, &w) in widths.iter().enumerate() {
            let act = if i + 1 == widths.len() { Activation::Linear } else { Activation::Relu };
            let lname = format!("{name}.{i}");
            layers.push(Dense::new(&lname, n, w, act, true, derive_seed(seed, &lname)));
            n = w;
        }
        FcStack { layers }
    }

    /// Activations of every layer, input first.
    pub fn forward(&self, x: Vec<f64>) -> Result<Vec<Vec<f64>>> {
        let mut acts = vec![x];
        for l in &self.layers {
            let y = l.forward(acts.last().expect("input present"))?;
            acts.push(y);
        }
        Ok(acts)
    }

    pub fn backward(&mut self, acts: &[Vec<f64>], grad_out: Vec<f64>) -> Vec<f64> {
        let mut g = grad_out;
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            g = l.backward(&acts[i], &acts[i + 1], &g);
        }
        g
    }
}

impl HasParams for FcStack {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Recurrent state of a planner, tagged with its clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionState {
    pub clip: Option<String>,
    pub recurrent: Vec<RecurrentConvState>,
}

impl FusionState {
    fn claim(&mut self, clip: &str) -> Result<()> {
        match &self.clip {
            Some(owner) if owner != clip => Err(Error::StaleState {
                state_clip: self.clip.clone(),
                input_clip: clip.to_string(),
            }),
            _ => {
                self.clip = Some(clip.to_string());
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlannerCache {
    lstm: Vec<ConvLstmCache>,
    fc_acts: Vec<Vec<f64>>,
}

/// One recurrent-conv layer over the 9×16 grid, flatten, four FC layers.
/// With 8 input channels this is the periphery-only planner.
#[derive(Clone, Debug)]
pub struct CombinedPlanner {
    pub lstm: ConvLstmCell,
    pub fc: FcStack,
}

impl CombinedPlanner {
    pub fn new(in_channels: usize, hidden: usize, kernel: usize, widths: &[usize], seed: u64) -> Result<Self> {
        Ok(CombinedPlanner {
            lstm: ConvLstmCell::new(
                "planner.lstm",
                (GRID_ROWS, GRID_COLS),
                in_channels,
                hidden,
                kernel,
                derive_seed(seed, "planner.lstm"),
            )?,
            fc: FcStack::new("planner.fc", GRID_ROWS * GRID_COLS * hidden, widths, seed),
        })
    }

    pub fn zero_state(&self) -> FusionState {
        FusionState {
            clip: None,
            recurrent: vec![self.lstm.zero_state()],
        }
    }

    /// Raw (un-normalized) output for one fused grid.
    pub fn forward(&self, x: &FeatureGrid, state: &RecurrentConvState) -> Result<(f64, RecurrentConvState, PlannerCache)> {
        let (h, next, cache) = self.lstm.step(x, state)?;
        let acts = self.fc.forward(h.values)?;
        let y = acts.last().expect("output")[0];
        Ok((
            y,
            next,
            PlannerCache {
                lstm: vec![cache],
                fc_acts: acts,
            },
        ))
    }

    /// Returns the input gradient; `d_state` carries (dh, dc) backwards in time.
    pub fn backward(&mut self, cache: &PlannerCache, d_y: f64, d_state: &mut (FeatureGrid, FeatureGrid)) -> FeatureGrid {
        let dflat = self.fc.backward(&cache.fc_acts, vec![d_y]);
        let mut dh = FeatureGrid::from_vec(GRID_ROWS, GRID_COLS, self.lstm.hidden_channels, dflat).expect("hidden shape");
        dh.add_assign(&d_state.0);
        let (dx, dh_prev, dc_prev) = self.lstm.backward_step(&cache.lstm[0], &dh, &d_state.1);
        *d_state = (dh_prev, dc_prev);
        dx
    }

    /// One step on fused features with clip-ownership checking.
    pub fn step(&self, x: &FeatureGrid, state: &mut FusionState, clip: &str) -> Result<f64> {
        state.claim(clip)?;
        let (y, next, _) = self.forward(x, &state.recurrent[0])?;
        state.recurrent[0] = next;
        Ok(y)
    }
}

impl HasParams for CombinedPlanner {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.lstm.params();
        p.extend(self.fc.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.lstm.params_mut();
        p.extend(self.fc.params_mut());
        p
    }
}

/// Separate recurrent streams for the peripheral grid and the stacked foveal
/// patches; their flattened outputs feed four FC layers.
#[derive(Clone, Debug)]
pub struct DualPlanner {
    pub peripheral: ConvLstmCell,
    pub foveal: ConvLstmCell,
    pub fc: FcStack,
    pub patch_side: usize,
}

impl DualPlanner {
    pub fn new(
        patch_side: usize,
        foveal_channels: usize,
        hidden: usize,
        kernel: usize,
        widths: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let peripheral = ConvLstmCell::new(
            "planner.peripheral_lstm",
            (GRID_ROWS, GRID_COLS),
            FEATURE_CHANNELS,
            hidden,
            kernel,
            derive_seed(seed, "planner.peripheral_lstm"),
        )?;
        let foveal = ConvLstmCell::new(
            "planner.foveal_lstm",
            (patch_side, patch_side),
            foveal_channels,
            hidden,
            kernel,
            derive_seed(seed, "planner.foveal_lstm"),
        )?;
        let inputs = (GRID_ROWS * GRID_COLS + patch_side * patch_side) * hidden;
        Ok(DualPlanner {
            peripheral,
            foveal,
            fc: FcStack::new("planner.fc", inputs, widths, seed),
            patch_side,
        })
    }

    pub fn zero_state(&self) -> FusionState {
        FusionState {
            clip: None,
            recurrent: vec![self.peripheral.zero_state(), self.foveal.zero_state()],
        }
    }

    /// Adds each patch's positional encoding and stacks the patches along
    /// channels in the given order.
    pub fn stack_foveae(patches: &[FeatureGrid], cells: &[Cell]) -> Result<FeatureGrid> {
        let mut stacked: Option<FeatureGrid> = None;
        for (p, &cell) in patches.iter().zip(cells) {
            let pe = positional_encoding(cell, p.channels)?;
            let mut q = p.clone();
            for v in q.values.chunks_exact_mut(p.channels) {
                for (a, b) in v.iter_mut().zip(&pe) {
                    *a += b;
                }
            }
            stacked = Some(match stacked {
                None => q,
                Some(s) => s.concat_channels(&q)?,
            });
        }
        stacked.ok_or_else(|| Error::Config("dual planner needs at least one fovea".into()))
    }

    pub fn forward(
        &self,
        xp: &FeatureGrid,
        xf: &FeatureGrid,
        states: &[RecurrentConvState],
    ) -> Result<(f64, Vec<RecurrentConvState>, PlannerCache)> {
        let (hp, np, cp) = self.peripheral.step(xp, &states[0])?;
        let (hf, nf, cf) = self.foveal.step(xf, &states[1])?;
        let mut flat = hp.values;
        flat.extend_from_slice(&hf.values);
        let acts = self.fc.forward(flat)?;
        let y = acts.last().expect("output")[0];
        Ok((
            y,
            vec![np, nf],
            PlannerCache {
                lstm: vec![cp, cf],
                fc_acts: acts,
            },
        ))
    }

    /// Returns `(d_peripheral, d_stacked_foveae)`.
    pub fn backward(
        &mut self,
        cache: &PlannerCache,
        d_y: f64,
        d_states: &mut [(FeatureGrid, FeatureGrid); 2],
    ) -> (FeatureGrid, FeatureGrid) {
        let h = self.peripheral.hidden_channels;
        let dflat = self.fc.backward(&cache.fc_acts, vec![d_y]);
        let split = GRID_ROWS * GRID_COLS * h;
        let mut dhp = FeatureGrid::from_vec(GRID_ROWS, GRID_COLS, h, dflat[..split].to_vec()).expect("shape");
        let s = self.patch_side;
        let mut dhf = FeatureGrid::from_vec(s, s, self.foveal.hidden_channels, dflat[split..].to_vec()).expect("shape");
        dhp.add_assign(&d_states[0].0);
        dhf.add_assign(&d_states[1].0);
        let (dxp, dhp_prev, dcp_prev) = self.peripheral.backward_step(&cache.lstm[0], &dhp, &d_states[0].1);
        let (dxf, dhf_prev, dcf_prev) = self.foveal.backward_step(&cache.lstm[1], &dhf, &d_states[1].1);
        d_states[0] = (dhp_prev, dcp_prev);
        d_states[1] = (dhf_prev, dcf_prev);
        (dxp, dxf)
    }

    pub fn step(
        &self,
        xp: &FeatureGrid,
        patches: &[FeatureGrid],
        cells: &[Cell],
        state: &mut FusionState,
        clip: &str,
    ) -> Result<f64> {
        state.claim(clip)?;
        let xf = Self::stack_foveae(patches, cells)?;
        let (y, next, _) = self.forward(xp, &xf, &state.recurrent)?;
        state.recurrent = next;
        Ok(y)
    }
}

impl HasParams for DualPlanner {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.peripheral.params();
        p.extend(self.foveal.params());
        p.extend(self.fc.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.peripheral.params_mut();
        p.extend(self.foveal.params_mut());
        p.extend(self.fc.params_mut());
        p
    }
}

#[derive(Clone, Debug)]
pub enum Planner {
    Combined(CombinedPlanner),
    Dual(DualPlanner),
    PeripheryOnly(CombinedPlanner),
}

impl Planner {
    pub fn zero_state(&self) -> FusionState {
        match self {
            Planner::Combined(p) | Planner::PeripheryOnly(p) => p.zero_state(),
            Planner::Dual(p) => p.zero_state(),
        }
    }
}

impl HasParams for Planner {
    fn params(&self) -> Vec<&Param> {
        match self {
            Planner::Combined(p) | Planner::PeripheryOnly(p) => p.params(),
            Planner::Dual(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Planner::Combined(p) | Planner::PeripheryOnly(p) => p.params_mut(),
            Planner::Dual(p) => p.params_mut(),
        }
    }
}

/// Frozen-backbone features for one frame: the peripheral grid and, per
/// fovea, the patch features with the patch geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    pub peripheral: FeatureGrid,
    pub foveae: Vec<(FeatureGrid, FoveaGeometry)>,
}

#[derive(Clone, Debug)]
struct StepCache {
    planner: PlannerCache,
    insertion: Option<Insertion>,
}

/// Everything the backward pass needs from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    peripheral: HeadCache,
    foveal: Option<HeadCache>,
    steps: Vec<StepCache>,
    geometries: Vec<Vec<FoveaGeometry>>,
    /// True where a new sequence starts and the recurrent state was reset.
    starts: Vec<bool>,
}

/// Predictions and placements for one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip: String,
    pub predictions: Vec<f64>,
    pub targets: Vec<Option<f64>>,
    pub placements: Vec<FoveaPlacement>,
}

#[derive(Clone, Debug)]
pub struct DrivingModel {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub peripheral: PeripheralEncoder,
    pub foveal: Option<ConvHead>,
    pub planner: Planner,
}

impl DrivingModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let report = shape_audit(&config)?;
        let seed = config.seed;
        let backbone = Backbone::new(&config.encoders.backbone, config.backbone_seed)?;
        let peripheral = PeripheralEncoder::new(
            &config.encoders.peripheral_head,
            report.peripheral_backbone,
            derive_seed(seed, "peripheral"),
        )?;
        let foveal = match (config.fovea_mode(), report.foveal_backbone) {
            (Some(mode), Some(fb)) => Some(foveal_encoder(
                config.encoders.foveal_specs(mode),
                fb,
                mode,
                derive_seed(seed, "foveal"),
            )?),
            _ => None,
        };
        let (hid, k, w) = (config.recurrent_hidden, config.recurrent_kernel, &config.fc_widths);
        let planner = match config.variant {
            PlannerVariant::Combined => {
                Planner::Combined(CombinedPlanner::new(2 * FEATURE_CHANNELS, hid, k, w, seed)?)
            }
            PlannerVariant::PeripheryOnly => {
                Planner::PeripheryOnly(CombinedPlanner::new(FEATURE_CHANNELS, hid, k, w, seed)?)
            }
            PlannerVariant::Dual => {
                let n = config.fovea_count();
                Planner::Dual(DualPlanner::new(
                    report.fused.0,
                    n * FEATURE_CHANNELS,
                    hid,
                    k,
                    w,
                    seed,
                )?)
            }
        };
        Ok(DrivingModel {
            config,
            backbone,
            peripheral,
            foveal,
            planner,
        })
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.peripheral.params_mut();
        if let Some(f) = self.foveal.as_mut() {
            p.extend(f.params_mut());
        }
        p.extend(self.planner.params_mut());
        p
    }

    pub fn reset_state(&self) -> FusionState {
        self.planner.zero_state()
    }

    fn denormalize(&self, y: f64) -> f64 {
        self.config.speed_offset + self.config.speed_scale * y
    }

    /// Cells for one frame under the model's fovea policy.
    pub fn select(&self, map: Option<&AttentionMap>, rng: &mut Rng) -> Result<Vec<Cell>> {
        match (&self.config.fovea, self.config.variant) {
            (Some(f), PlannerVariant::Combined | PlannerVariant::Dual) => select_cells(f, map, rng),
            _ => Ok(Vec::new()),
        }
    }

    pub fn peripheral_features(&self, frame: &Frame) -> Result<FeatureGrid> {
        self.backbone.forward(&preprocess_peripheral(frame, &self.config.encoders.preproc)?)
    }

    /// Backbone features of the patches at `cells`. Nothing is computed for
    /// the periphery-only variant.
    pub fn fovea_features(&self, frame: &Frame, cells: &[Cell]) -> Result<Vec<(FeatureGrid, FoveaGeometry)>> {
        let Some(f) = (self.foveal.is_some()).then_some(()).and(self.config.fovea.as_ref()) else {
            return Ok(Vec::new());
        };
        if (frame.height, frame.width) != self.config.frame {
            return Err(Error::shape("frame", self.config.frame, (frame.height, frame.width)));
        }
        cells
            .iter()
            .map(|&c| {
                let g = crate::fovea::cell_to_geometry(c, self.config.frame, f.patch_px);
                let x = crop_and_resize_patch(frame, g.rect, &self.config.encoders.preproc)?;
                Ok((self.backbone.forward(&x)?, g))
            })
            .collect()
    }

    pub fn prepare_frame(&self, frame: &Frame, peripheral: Option<FeatureGrid>, cells: &[Cell]) -> Result<FrameInput> {
        let peripheral = match peripheral {
            Some(p) => p,
            None => self.peripheral_features(frame)?,
        };
        Ok(FrameInput {
            peripheral,
            foveae: self.fovea_features(frame, cells)?,
        })
    }

    fn check_foveae(&self, input: &FrameInput) -> Result<()> {
        let want = self.config.fovea_count();
        if input.foveae.len() != want {
            return Err(Error::shape("foveae per frame", want, input.foveae.len()));
        }
        Ok(())
    }

    /// Planner step on encoded features.
    fn plan(
        &self,
        xp: &FeatureGrid,
        patches: &[FeatureGrid],
        geoms: &[FoveaGeometry],
        states: &[RecurrentConvState],
    ) -> Result<(f64, Vec<RecurrentConvState>, StepCache)> {
        match &self.planner {
            Planner::PeripheryOnly(p) => {
                let (y, s, c) = p.forward(xp, &states[0])?;
                Ok((y, vec![s], StepCache { planner: c, insertion: None }))
            }
            Planner::Combined(p) => {
                let corners: Vec<Cell> = geoms.iter().map(|g| g.corner).collect();
                let ins = insert_fovea_features(patches, &corners)?;
                let xc = concat_features(xp, &ins.grid)?;
                let (y, s, c) = p.forward(&xc, &states[0])?;
                Ok((
                    y,
                    vec![s],
                    StepCache {
                        planner: c,
                        insertion: Some(ins),
                    },
                ))
            }
            Planner::Dual(p) => {
                let cells: Vec<Cell> = geoms.iter().map(|g| g.cell).collect();
                let xf = DualPlanner::stack_foveae(patches, &cells)?;
                let (y, s, c) = p.forward(xp, &xf, states)?;
                Ok((y, s, StepCache { planner: c, insertion: None }))
            }
        }
    }

    /// Evaluation-mode step with clip-ownership checking; returns km/h.
    pub fn step(&self, input: &FrameInput, state: &mut FusionState, clip: &str) -> Result<f64> {
        self.check_foveae(input)?;
        state.claim(clip)?;
        let xp = self.peripheral.forward_eval(std::slice::from_ref(&input.peripheral))?.remove(0);
        let patches: Vec<FeatureGrid> = input.foveae.iter().map(|f| f.0.clone()).collect();
        let patches = match &self.foveal {
            Some(head) if !patches.is_empty() => head.forward_eval(&patches)?,
            _ => Vec::new(),
        };
        let geoms: Vec<FoveaGeometry> = input.foveae.iter().map(|f| f.1).collect();
        let (y, next, _) = self.plan(&xp, &patches, &geoms, &state.recurrent)?;
        state.recurrent = next;
        Ok(self.denormalize(y))
    }

    /// Training-mode forward over a sequence from a fresh state.
    pub fn forward_train(&mut self, inputs: &[FrameInput], rng: &mut Rng) -> Result<(Vec<f64>, ForwardTrace)> {
        self.forward_train_batch(inputs, &[inputs.len()], rng)
    }

    /// Training-mode forward over consecutive sequences of the given lengths.
    /// Normalization statistics span the whole batch; each sequence starts
    /// from a fresh recurrent state.
    pub fn forward_train_batch(
        &mut self,
        inputs: &[FrameInput],
        lengths: &[usize],
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        if lengths.iter().sum::<usize>() != inputs.len() || lengths.contains(&0) {
            return Err(Error::shape("sequence lengths", inputs.len(), lengths.iter().sum::<usize>()));
        }
        let mut starts = vec![false; inputs.len()];
        let mut at = 0;
        for l in lengths {
            starts[at] = true;
            at += l;
        }
        for i in inputs {
            self.check_foveae(i)?;
        }
        let periph_in: Vec<FeatureGrid> = inputs.iter().map(|i| i.peripheral.clone()).collect();
        let (xps, pcache) = self.peripheral.forward_train(&periph_in, rng)?;
        let patch_in: Vec<FeatureGrid> = inputs.iter().flat_map(|i| i.foveae.iter().map(|f| f.0.clone())).collect();
        let (patches, fcache) = match self.foveal.as_mut() {
            Some(head) if !patch_in.is_empty() => {
                let (p, c) = head.forward_train(&patch_in, rng)?;
                (p, Some(c))
            }
            _ => (Vec::new(), None),
        };
        let n = self.config.fovea_count();
        let mut states = self.planner.zero_state().recurrent;
        let mut preds = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        let mut geometries = Vec::with_capacity(inputs.len());
        for (t, input) in inputs.iter().enumerate() {
            if starts[t] {
                states = self.planner.zero_state().recurrent;
            }
            let geoms: Vec<FoveaGeometry> = input.foveae.iter().map(|f| f.1).collect();
            let p = if n > 0 { &patches[t * n..(t + 1) * n] } else { &[][..] };
            let (y, next, cache) = self.plan(&xps[t], p, &geoms, &states)?;
            states = next;
            preds.push(self.denormalize(y));
            steps.push(cache);
            geometries.push(geoms);
        }
        Ok((
            preds,
            ForwardTrace {
                peripheral: pcache,
                foveal: fcache,
                steps,
                geometries,
                starts,
            },
        ))
    }

    /// Backpropagates `d_preds` (gradient of the loss with respect to each
    /// km/h prediction) through a trace; accumulates parameter gradients.
    pub fn backward(&mut self, trace: Option<&ForwardTrace>, d_preds: &[f64]) -> Result<()> {
        let trace = trace.ok_or(Error::NoForwardTrace)?;
        let steps = trace.steps.len();
        if d_preds.len() != steps {
            return Err(Error::shape("prediction gradients", steps, d_preds.len()));
        }
        let scale = self.config.speed_scale;
        let hid = self.config.recurrent_hidden;
        let n = self.config.fovea_count();
        let mut d_xp = vec![FeatureGrid::zeros(GRID_ROWS, GRID_COLS, FEATURE_CHANNELS); steps];
        let mut d_patches: Vec<FeatureGrid> = Vec::with_capacity(steps * n);
        let mut per_step_patches: Vec<Vec<FeatureGrid>> = vec![Vec::new(); steps];
        match &mut self.planner {
            Planner::PeripheryOnly(p) => {
                let mut ds = (FeatureGrid::zeros(GRID_ROWS, GRID_COLS, hid), FeatureGrid::zeros(GRID_ROWS, GRID_COLS, hid));
                for t in (0..steps).rev() {
                    if t + 1 < steps && trace.starts[t + 1] {
                        ds.0.values.fill(0.0);
                        ds.1.values.fill(0.0);
                    }
                    d_xp[t] = p.backward(&trace.steps[t].planner, d_preds[t] * scale, &mut ds);
                }
            }
            Planner::Combined(p) => {
                let mut ds = (FeatureGrid::zeros(GRID_ROWS, GRID_COLS, hid), FeatureGrid::zeros(GRID_ROWS, GRID_COLS, hid));
                for t in (0..steps).rev() {
                    if t + 1 < steps && trace.starts[t + 1] {
                        ds.0.values.fill(0.0);
                        ds.1.values.fill(0.0);
                    }
                    let dxc = p.backward(&trace.steps[t].planner, d_preds[t] * scale, &mut ds);
                    d_xp[t] = dxc.slice_channels(0, FEATURE_CHANNELS)?;
                    let dxf = dxc.slice_channels(FEATURE_CHANNELS, 2 * FEATURE_CHANNELS)?;
                    let corners: Vec<Cell> = trace.geometries[t].iter().map(|g| g.corner).collect();
                    let ins = trace.steps[t].insertion.as_ref().ok_or(Error::NoForwardTrace)?;
                    per_step_patches[t] = ins.backward(&dxf, &corners);
                }
            }
            Planner::Dual(p) => {
                let side = p.patch_side;
                let mut ds = [
                    (FeatureGrid::zeros(GRID_ROWS, GRID_COLS, hid), FeatureGrid::zeros(GRID_ROWS, GRID_COLS, hid)),
                    (FeatureGrid::zeros(side, side, hid), FeatureGrid::zeros(side, side, hid)),
                ];
                for t in (0..steps).rev() {
                    if t + 1 < steps && trace.starts[t + 1] {
                        for d in ds.iter_mut() {
                            d.0.values.fill(0.0);
                            d.1.values.fill(0.0);
                        }
                    }
                    let (dp, dfs) = p.backward(&trace.steps[t].planner, d_preds[t] * scale, &mut ds);
                    d_xp[t] = dp;
                    per_step_patches[t] = (0..n)
                        .map(|k| dfs.slice_channels(k * FEATURE_CHANNELS, (k + 1) * FEATURE_CHANNELS))
                        .collect::<Result<Vec<_>>>()?;
                }
            }
        }
        for s in per_step_patches {
            d_patches.extend(s);
        }
        self.peripheral.backward(&trace.peripheral, &d_xp);
        if let (Some(head), Some(cache)) = (self.foveal.as_mut(), trace.foveal.as_ref()) {
            head.backward(cache, &d_patches);
        }
        Ok(())
    }

    /// Evaluation over a run of frames from a fresh state. `maps` must cover
    /// the frames when the policy needs attention.
    pub fn predict_frames(
        &self,
        clip: &str,
        frames: &[Frame],
        maps: Option<&[AttentionMap]>,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, Vec<FoveaPlacement>)> {
        let needs_map = self.config.fovea.as_ref().is_some_and(|f| f.policy.needs_attention());
        if needs_map && maps.map_or(true, |m| m.len() < frames.len()) {
            let label = self.config.fovea.as_ref().map(|f| f.policy.label()).unwrap_or_default();
            return Err(Error::MissingAttention(label));
        }
        let patch = self.config.fovea.as_ref().map_or(0, |f| f.patch_px);
        let mut state = self.reset_state();
        let mut preds = Vec::with_capacity(frames.len());
        let mut placements = Vec::with_capacity(frames.len());
        for (t, frame) in frames.iter().enumerate() {
            let cells = self.select(maps.map(|m| &m[t]), rng)?;
            let input = self.prepare_frame(frame, None, &cells)?;
            preds.push(self.step(&input, &mut state, clip)?);
            placements.push(FoveaPlacement::from_cells(&cells, self.config.frame, patch));
        }
        Ok((preds, placements))
    }

    pub fn checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::from_params("driving-model", self.params());
        ck.metadata = serde_json::json!({ "config": self.config, "extra": metadata });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "driving-model" {
            return Err(Error::CorruptCheckpoint(format!("expected driving-model checkpoint, got {}", ck.kind)));
        }
        let config: ModelConfig = serde_json::from_value(ck.metadata["config"].clone())
            .map_err(|e| Error::CorruptCheckpoint(format!("model config: {e}")))?;
        let mut m = DrivingModel::new(config)?;
        ck.apply(m.params_mut())?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl HasParams for DrivingModel {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.peripheral.params());
        if let Some(f) = &self.foveal {
            p.extend(f.params());
        }
        p.extend(self.planner.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        p.extend(self.peripheral.params_mut());
        if let Some(f) = self.foveal.as_mut() {
            p.extend(f.params_mut());
        }
        p.extend(self.planner.params_mut());
        p
    }
}

/// Per-frame speed predictions for a whole clip, with targets `horizon`
/// frames ahead. `maps` are attention maps for the clip's frames.
pub fn forward_clip(
    model: &DrivingModel,
    clip: &crate::world::VideoClip,
    maps: Option<&[AttentionMap]>,
    rng: &mut Rng,
) -> Result<ClipPrediction> {
    let h = model.config.horizon;
    if clip.len() <= h {
        return Err(Error::ClipTooShort {
            clip: clip.id.clone(),
            frames: clip.len(),
            horizon: h,
        });
    }
    let (predictions, placements) = model.predict_frames(&clip.id, &clip.frames, maps, rng)?;
    let targets = (0..clip.len()).map(|t| clip.speed.get(t + h).copied()).collect();
    Ok(ClipPrediction {
        clip: clip.id.clone(),
        predictions,
        targets,
        placements,
    })
}

/// Checks every stage shape of a model configuration, failing with the
/// offending layer trace.
pub fn shape_audit(config: &ModelConfig) -> Result<ShapeReport> {
    use crate::encoders::{audit_stack, shape_trace};

    let specs = &config.encoders;
    let (ph, pw) = config.peripheral_input();
    let pb = *shape_trace("backbone (peripheral)", &specs.backbone, (ph, pw, 3))?
        .last()
        .expect("trace");
    let head_trace = shape_trace("peripheral head", &specs.peripheral_head, pb)?;
    let head_out = *head_trace.last().expect("trace");
    if config.variant != PlannerVariant::PeripheryOnly {
        audit_stack(
            "peripheral head",
            &specs.peripheral_head,
            pb,
            (PERIPHERAL_HEAD_OUT.0, PERIPHERAL_HEAD_OUT.1, FEATURE_CHANNELS),
        )?;
    } else if head_out.2 != FEATURE_CHANNELS {
        return Err(Error::shape("peripheral head channels", FEATURE_CHANNELS, head_out.2));
    }
    let grid = (GRID_ROWS, GRID_COLS, FEATURE_CHANNELS);
    let mut report = ShapeReport {
        frame: config.frame,
        peripheral_input: (ph, pw, 3),
        peripheral_backbone: pb,
        peripheral_head: head_out,
        peripheral_grid: grid,
        patch_crop: None,
        patch_input: None,
        foveal_backbone: None,
        foveal_patch: None,
        fused: grid,
    };
    if let Some(mode) = config.fovea_mode() {
        let crop = specs.preproc.patch_crop;
        let pi = specs.preproc.patch_input;
        let fb = *shape_trace("backbone (foveal)", &specs.backbone, (pi, pi, 3))?
            .last()
            .expect("trace");
        let side = mode.patch_side();
        audit_stack("foveal head", specs.foveal_specs(mode), fb, (side, side, FEATURE_CHANNELS))?;
        if mode == FoveaMode::Combined && side != FOVEA_PATCH_COMBINED {
            return Err(Error::shape("combined fovea patch", FOVEA_PATCH_COMBINED, side));
        }
        if config.frame.0 % GRID_ROWS != 0 || config.frame.1 % GRID_COLS != 0 {
            return Err(Error::shape("frame divisible by grid", (GRID_ROWS, GRID_COLS), config.frame));
        }
        if crop * GRID_ROWS != PATCH_CELLS * config.frame.0 || crop * GRID_COLS != PATCH_CELLS * config.frame.1 {
            return Err(Error::shape("patch spans 3×3 cells", PATCH_CELLS * config.frame.0 / GRID_ROWS, crop));
        }
        report.patch_crop = Some((crop, crop));
        report.patch_input = Some((pi, pi, 3));
        report.foveal_backbone = Some(fb);
        report.foveal_patch = Some((side, side, FEATURE_CHANNELS));
        report.fused = match mode {
            FoveaMode::Combined => (GRID_ROWS, GRID_COLS, 2 * FEATURE_CHANNELS),
            FoveaMode::Dual => (side, side, config.fovea_count() * FEATURE_CHANNELS),
        };
    }
    Ok(report)
}

/// Relative FLOPs gap allowed when matching a uni-resolution baseline.
pub const FLOPS_MATCH_TOLERANCE: f64 = 0.02;

/// Periphery-only copy of `reference` with a different peripheral input.
pub fn uniresolution_config(reference: &ModelConfig, peripheral: (usize, usize)) -> ModelConfig {
    let mut cfg = reference.clone();
    cfg.variant = PlannerVariant::PeripheryOnly;
    cfg.fovea = None;
    cfg.encoders.preproc.peripheral = peripheral;
    cfg
}

/// Relative width deviation from exact 16:9 tolerated by the baseline search.
pub const ASPECT_SLACK: f64 = 0.02;

/// Largest near-16:9 peripheral input (width within `ASPECT_SLACK` of `16h/9`) whose
/// per-frame FLOPs do not exceed `target`; fails unless within 2% of it.
pub fn build_uniresolution_baseline(reference: &ModelConfig, target: u64) -> Result<ModelConfig> {
    use crate::harness::flops::compute_flops;

    let mut best: Option<(u64, ModelConfig)> = None;
    for h in 1..=reference.frame.0 {
        let centre = (16.0 * h as f64 / 9.0).round() as usize;
        let mut any_below = false;
        let mut any_valid = false;
        let slack = ((centre as f64 * ASPECT_SLACK).round() as usize).max(1);
        for w in centre.saturating_sub(slack)..=centre + slack {
            if w == 0 || w > reference.frame.1 {
                continue;
            }
            let cfg = uniresolution_config(reference, (h, w));
            let Ok(report) = compute_flops(&cfg) else { continue };
            any_valid = true;
            let f = report.total();
            if f <= target {
                any_below = true;
                if best.as_ref().map_or(true, |(b, _)| f > *b) {
                    best = Some((f, cfg));
                }
            }
        }
        if any_valid && !any_below {
            break;
        }
    }
    match best {
        Some((f, cfg)) if (target - f) as f64 <= FLOPS_MATCH_TOLERANCE * target as f64 => Ok(cfg),
        Some((f, cfg)) => Err(Error::Infeasible(format!(
            "closest input {:?} gives {f} FLOPs, more than 2% under {target}",
            cfg.peripheral_input()
        ))),
        None => Err(Error::Infeasible(format!("no peripheral input fits {target} FLOPs"))),
    }
}
