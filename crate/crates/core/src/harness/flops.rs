//! Per-frame operation counts. One multiply-accumulate is two FLOPs.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::encoders::{shape_trace, FEATURE_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::planner::{shape_audit, ModelConfig, PlannerVariant};
use crate::{GRID_COLS, GRID_ROWS};

pub const RESAMPLE_OPS_PER_VALUE: u64 = 8;
/// Gate nonlinearities and the cell / hidden updates, per hidden value.
pub const RECURRENT_ELEMENTWISE_OPS: u64 = 10;
/// Scale and shift per value.
pub const BATCH_NORM_OPS_PER_VALUE: u64 = 2;

pub fn conv_flops(kernel: (usize, usize), cin: usize, cout: usize, out: (usize, usize)) -> u64 {
    2 * (kernel.0 * kernel.1 * cin * cout * out.0 * out.1) as u64
}

pub fn fc_flops(inputs: usize, outputs: usize) -> u64 {
    2 * (inputs * outputs) as u64
}

pub fn recurrent_flops(hw: (usize, usize), cin: usize, hidden: usize, kernel: usize) -> u64 {
    conv_flops((kernel, kernel), cin + hidden, 4 * hidden, hw) + RECURRENT_ELEMENTWISE_OPS * (hw.0 * hw.1 * hidden) as u64
}

pub fn resample_flops(out: (usize, usize), channels: usize) -> u64 {
    RESAMPLE_OPS_PER_VALUE * (out.0 * out.1 * channels) as u64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsEntry {
    pub layer: String,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub layers: Vec<FlopsEntry>,
}

impl FlopsReport {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(|e| e.flops).sum()
    }

    pub fn push(&mut self, layer: impl Into<String>, flops: u64) {
        self.layers.push(FlopsEntry {
            layer: layer.into(),
            flops,
        });
    }
}

/// Conv stack, optionally with a batch norm after every layer. Returns the
/// output shape.
pub fn stack_flops(
    report: &mut FlopsReport,
    name: &str,
    specs: &[LayerSpec],
    input: (usize, usize, usize),
    batch_norm: bool,
) -> Result<(usize, usize, usize)> {
    let trace = shape_trace(name, specs, input)?;
    for (i, spec) in specs.iter().enumerate() {
        let (h, w, c) = trace[i + 1];
        report.push(format!("{name}.{i}.conv"), conv_flops(spec.kernel, spec.in_channels, c, (h, w)));
        if batch_norm {
            report.push(format!("{name}.{i}.bn"), BATCH_NORM_OPS_PER_VALUE * (h * w * c) as u64);
        }
    }
    Ok(*trace.last().expect("trace"))
}

fn attention_flops(report: &mut FlopsReport, att: &AttentionConfig, backbone_out: (usize, usize, usize)) -> Result<()> {
    let head = stack_flops(report, "attention.head", &att.head, backbone_out, true)?;
    if (head.0, head.1) != (GRID_ROWS, GRID_COLS) {
        report.push("attention.upsample", resample_flops((GRID_ROWS, GRID_COLS), head.2));
    }
    report.push(
        "attention.recurrent",
        recurrent_flops((GRID_ROWS, GRID_COLS), head.2, att.hidden_channels, att.kernel),
    );
    report.push(
        "attention.readout",
        conv_flops((1, 1), att.hidden_channels, 1, (GRID_ROWS, GRID_COLS)),
    );
    Ok(())
}

/// Per-frame FLOPs of a model, counting every fovea and, for
/// attention-driven policies, the attention module on the shared backbone.
pub fn compute_flops(config: &ModelConfig) -> Result<FlopsReport> {
    config.validate()?;
    let shapes = shape_audit(config)?;
    let specs = &config.encoders;
    let mut r = FlopsReport::default();
    let (ph, pw) = config.peripheral_input();
    r.push("preprocess.peripheral", resample_flops((ph, pw), 3));
    let pb = stack_flops(&mut r, "backbone.peripheral", &specs.backbone, (ph, pw, 3), false)?;
    let head = stack_flops(&mut r, "peripheral.head", &specs.peripheral_head, pb, true)?;
    if (head.0, head.1) != (GRID_ROWS, GRID_COLS) {
        r.push("peripheral.resample", resample_flops((GRID_ROWS, GRID_COLS), head.2));
    }
    let n = config.fovea_count();
    if let Some(mode) = config.fovea_mode() {
        let pi = specs.preproc.patch_input;
        for k in 0..n {
            r.push(format!("fovea{k}.crop"), resample_flops((pi, pi), 3));
            let fb = stack_flops(&mut r, &format!("backbone.fovea{k}"), &specs.backbone, (pi, pi, 3), false)?;
            stack_flops(&mut r, &format!("fovea{k}.head"), specs.foveal_specs(mode), fb, true)?;
        }
        if config.fovea.as_ref().is_some_and(|f| f.policy.needs_attention()) {
            let att = AttentionConfig::for_scale(config.scale, config.backbone_seed, 0)?;
            attention_flops(&mut r, &att, pb)?;
        }
    }
    let (hid, k) = (config.recurrent_hidden, config.recurrent_kernel);
    let grid = (GRID_ROWS, GRID_COLS);
    let fc_in = match config.variant {
        PlannerVariant::PeripheryOnly => {
            r.push("planner.recurrent", recurrent_flops(grid, FEATURE_CHANNELS, hid, k));
            GRID_ROWS * GRID_COLS * hid
        }
        PlannerVariant::Combined => {
            r.push("planner.recurrent", recurrent_flops(grid, 2 * FEATURE_CHANNELS, hid, k));
            GRID_ROWS * GRID_COLS * hid
        }
        PlannerVariant::Dual => {
            let (s, _, c) = shapes.fused;
            r.push("planner.positional", (s * s * c) as u64);
            r.push("planner.recurrent.peripheral", recurrent_flops(grid, FEATURE_CHANNELS, hid, k));
            r.push("planner.recurrent.foveal", recurrent_flops((s, s), c, hid, k));
            (GRID_ROWS * GRID_COLS + s * s) * hid
        }
    };
    let mut inputs = fc_in;
    for (i, &w) in config.fc_widths.iter().enumerate() {
        r.push(format!("planner.fc.{i}"), fc_flops(inputs, w));
        inputs = w;
    }
    if r.total() == 0 {
        return Err(Error::Config("model has no layers".into()));
    }
    Ok(r)
}
