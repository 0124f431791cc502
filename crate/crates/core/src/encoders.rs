//! Frame preprocessing, the frozen shared backbone, and the trainable
//! peripheral / foveal convolutional heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fovea::PixelRect;
use crate::grid::FeatureGrid;
use crate::nn::{BatchNorm, BatchNormCache, Conv2d, Dropout, HasParams, LayerSpec, Param, Resampler};
use crate::seed::{derive_seed, Rng};
use crate::world::Frame;
use crate::{GRID_COLS, GRID_ROWS};

/// Channels of every encoder output.
pub const FEATURE_CHANNELS: usize = 8;
pub const PERIPHERAL_HEAD_OUT: (usize, usize) = (3, 7);
pub const FOVEA_PATCH_COMBINED: usize = 3;
pub const FOVEA_PATCH_DUAL: usize = 14;
pub const CHANNEL_MEANS: [f64; 3] = [123.68, 116.79, 103.939];
pub const HEAD_DROPOUT: f64 = 0.2;
/// Backbone inputs are divided by this after mean subtraction.
const INPUT_SCALE: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocConfig {
    pub peripheral: (usize, usize),
    pub patch_crop: usize,
    pub patch_input: usize,
    pub channel_means: [f64; 3],
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig::for_scale(1)
    }
}

impl PreprocConfig {
    /// Full-scale sizes divided by `scale`.
    pub fn for_scale(scale: usize) -> Self {
        let scale = scale.max(1);
        PreprocConfig {
            peripheral: (72 / scale, 128 / scale),
            patch_crop: 240 / scale,
            patch_input: 185 / scale,
            channel_means: CHANNEL_MEANS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.peripheral.0 == 0 || self.peripheral.1 == 0 || self.patch_crop == 0 || self.patch_input == 0 {
            return Err(Error::Config("preprocessing resolutions must be positive".into()));
        }
        Ok(())
    }
}

/// Bilinear resize of a pixel region followed by per-channel mean subtraction.
fn resize_region(frame: &Frame, rect: PixelRect, size: (usize, usize), means: &[f64; 3]) -> Result<FeatureGrid> {
    let plan = Resampler::new((rect.bottom - rect.top, rect.right - rect.left), size)?;
    let w = frame.width;
    Ok(plan.apply_with(3, |y, x, c| {
        frame.pixels[((rect.top + y) * w + rect.left + x) * 3 + c] as f64 - means[c]
    }))
}

pub fn preprocess_peripheral(frame: &Frame, cfg: &PreprocConfig) -> Result<FeatureGrid> {
    let whole = PixelRect {
        top: 0,
        left: 0,
        bottom: frame.height,
        right: frame.width,
    };
    resize_region(frame, whole, cfg.peripheral, &cfg.channel_means)
}

pub fn crop_and_resize_patch(frame: &Frame, rect: PixelRect, cfg: &PreprocConfig) -> Result<FeatureGrid> {
    if rect.bottom > frame.height || rect.right > frame.width || rect.top >= rect.bottom || rect.left >= rect.right {
        return Err(Error::shape("patch rectangle", (frame.height, frame.width), rect));
    }
    resize_region(frame, rect, (cfg.patch_input, cfg.patch_input), &cfg.channel_means)
}

/// Layer-by-layer output shapes of a conv stack, or a shape error carrying
/// the trace up to the failing layer.
pub fn shape_trace(name: &str, specs: &[LayerSpec], input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
    let mut trace = vec![input];
    let (mut h, mut w, mut c) = input;
    for (i, spec) in specs.iter().enumerate() {
        let fail = |why: String, trace: &[(usize, usize, usize)]| {
            Error::shape(&format!("{name} layer {i}"), why, format!("trace {trace:?}"))
        };
        spec.validate()?;
        if spec.in_channels != c {
            return Err(fail(format!("{} input channels", spec.in_channels), &trace));
        }
        (h, w) = spec
            .output_hw(h, w)
            .map_err(|_| fail(format!("input >= kernel {:?}", spec.kernel), &trace))?;
        c = spec.out_channels;
        trace.push((h, w, c));
    }
    Ok(trace)
}

/// Checks that a conv stack maps `input` to exactly `output`.
pub fn audit_stack(
    name: &str,
    specs: &[LayerSpec],
    input: (usize, usize, usize),
    output: (usize, usize, usize),
) -> Result<Vec<(usize, usize, usize)>> {
    let trace = shape_trace(name, specs, input)?;
    let last = *trace.last().expect("trace holds the input");
    if last != output {
        return Err(Error::shape(&format!("{name} output"), output, format!("{last:?} via {trace:?}")));
    }
    Ok(trace)
}

/// Fixed generic first-layer filters: luminance, colour opponency, and
/// oriented edge / grating detectors of both polarities.
fn filter_bank(spec: &LayerSpec, seed: u64) -> Vec<f64> {
    let (kh, kw) = spec.kernel;
    let ic = spec.in_channels;
    let mut w = crate::nn::xavier_init(&[spec.out_channels, kh, kw, ic], seed);
    let taps = (kh * kw) as f64;
    let grating = |pos: usize, len: usize| -> f64 {
        let period = (len / 2).max(2);
        if (pos % period) < period / 2 {
            1.0
        } else {
            -1.0
        }
    };
    let half = |pos: usize, len: usize| -> f64 {
        if 2 * pos < len {
            1.0
        } else {
            -1.0
        }
    };
    for o in 0..spec.out_channels.min(8) {
        for y in 0..kh {
            for x in 0..kw {
                for c in 0..ic {
                    let lum = 1.0 / (3.0 * taps);
                    let v = match o {
                        0 => lum,
                        1 => [1.0, 0.0, -1.0][c.min(2)] / taps,
                        2 => half(y, kh) * lum,
                        3 => -half(y, kh) * lum,
                        4 => half(x, kw) * lum,
                        5 => -half(x, kw) * lum,
                        6 => grating(y, kh) * lum,
                        _ => grating(x, kw) * lum,
                    };
                    w[((o * kh + y) * kw + x) * ic + c] = v / INPUT_SCALE * 4.0;
                }
            }
        }
    }
    w
}

/// Frozen convolution stack shared by the peripheral, foveal and attention
/// paths. Never receives gradients.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub convs: Vec<Conv2d>,
}

impl Backbone {
    /// The first layer gets the fixed filter bank, later square layers a
    /// per-channel box filter (rectify-and-pool), anything else seeded weights.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut convs = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let spec = spec.clone().frozen();
            let layer_seed = derive_seed(seed, &format!("backbone.{i}"));
            let mut conv = Conv2d::new(&format!("backbone.{i}"), spec.clone(), layer_seed)?;
            if i == 0 && spec.in_channels == 3 {
                conv.weight.value = filter_bank(&spec, layer_seed);
            } else if spec.in_channels == spec.out_channels {
                let (kh, kw) = spec.kernel;
                let ic = spec.in_channels;
                let mut w = vec![0.0; spec.out_channels * kh * kw * ic];
                for o in 0..spec.out_channels {
                    for t in 0..kh * kw {
                        w[(o * kh * kw + t) * ic + o] = 1.0 / (kh * kw) as f64;
                    }
                }
                conv.weight.value = w;
            }
            convs.push(conv);
        }
        Ok(Backbone { convs })
    }

    pub fn output_shape(&self, input: (usize, usize)) -> Result<(usize, usize, usize)> {
        let specs: Vec<LayerSpec> = self.convs.iter().map(|c| c.spec.clone()).collect();
        let trace = shape_trace("backbone", &specs, (input.0, input.1, 3))?;
        Ok(*trace.last().expect("non-empty trace"))
    }

    /// Conv + ReLU per layer; the input is a mean-subtracted image.
    pub fn forward(&self, x: &FeatureGrid) -> Result<FeatureGrid> {
        if x.channels != 3 {
            return Err(Error::shape("backbone input channels", 3, x.channels));
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?;
            h.values.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(h)
    }
}

impl HasParams for Backbone {
    fn params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

#[derive(Clone, Debug)]
struct HeadLayerCache {
    inputs: Vec<FeatureGrid>,
    norm: BatchNormCache,
    /// Post-ReLU activations, before dropout.
    activated: Vec<FeatureGrid>,
    masks: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    layers: Vec<HeadLayerCache>,
}

/// Trainable conv stack: each layer is conv → batch norm → ReLU → dropout.
#[derive(Clone, Debug)]
pub struct ConvHead {
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm>,
    pub dropouts: Vec<Dropout>,
    pub input: (usize, usize, usize),
    pub output: (usize, usize, usize),
}

impl ConvHead {
    pub fn new(
        name: &str,
        specs: &[LayerSpec],
        input: (usize, usize, usize),
        output: (usize, usize, usize),
        seed: u64,
    ) -> Result<Self> {
        audit_stack(name, specs, input, output)?;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut dropouts = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            let lname = format!("{name}.{i}");
            convs.push(Conv2d::new(&lname, spec.clone(), derive_seed(seed, &lname))?);
            norms.push(BatchNorm::new(&format!("{lname}.bn"), spec.out_channels, spec.trainable));
            dropouts.push(Dropout::new(spec.dropout_rate));
        }
        Ok(ConvHead {
            convs,
            norms,
            dropouts,
            input,
            output,
        })
    }

    fn check_inputs(&self, xs: &[FeatureGrid]) -> Result<()> {
        for x in xs {
            x.expect_shape("conv head input", self.input)?;
        }
        Ok(())
    }

    /// Inference: running batch statistics, no dropout.
    pub fn forward_eval(&self, xs: &[FeatureGrid]) -> Result<Vec<FeatureGrid>> {
        self.check_inputs(xs)?;
        let mut hs = xs.to_vec();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let z = hs.iter().map(|h| conv.forward(h)).collect::<Result<Vec<_>>>()?;
            hs = norm.forward_eval(&z)?;
            for h in &mut hs {
                h.values.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(hs)
    }

    /// Training forward over one batch; batch statistics span every grid.
    pub fn forward_train(&mut self, xs: &[FeatureGrid], rng: &mut Rng) -> Result<(Vec<FeatureGrid>, HeadCache)> {
        self.check_inputs(xs)?;
        let mut hs = xs.to_vec();
        let mut layers = Vec::with_capacity(self.convs.len());
        for i in 0..self.convs.len() {
            let z = hs.iter().map(|h| self.convs[i].forward(h)).collect::<Result<Vec<_>>>()?;
            let (mut a, norm) = self.norms[i].forward_train(&z)?;
            for h in &mut a {
                h.values.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let mut out = Vec::with_capacity(a.len());
            let mut masks = Vec::with_capacity(a.len());
            for h in &a {
                let (y, m) = self.dropouts[i].forward_train(h, rng);
                out.push(y);
                masks.push(m);
            }
            layers.push(HeadLayerCache {
                inputs: std::mem::replace(&mut hs, out),
                norm,
                activated: a,
                masks,
            });
        }
        Ok((hs, HeadCache { layers }))
    }

    /// Accumulates parameter gradients; the head input is frozen so no input
    /// gradient is returned.
    pub fn backward(&mut self, cache: &HeadCache, grads: &[FeatureGrid]) {
        let mut g = grads.to_vec();
        for i in (0..self.convs.len()).rev() {
            let lc = &cache.layers[i];
            let mut gz: Vec<FeatureGrid> = g
                .iter()
                .zip(&lc.masks)
                .zip(&lc.activated)
                .map(|((gy, m), a)| {
                    let mut d = Dropout::backward(m, gy);
                    for (dv, av) in d.values.iter_mut().zip(&a.values) {
                        if *av <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    d
                })
                .collect();
            gz = self.norms[i].backward(&lc.norm, &gz);
            let want = i > 0;
            // Every grid must reach the conv, even when no input gradient comes back.
            let back: Vec<Option<FeatureGrid>> = gz
                .iter()
                .zip(&lc.inputs)
                .map(|(gzv, x)| self.convs[i].backward(x, gzv, want))
                .collect();
            g = back.into_iter().flatten().collect();
        }
    }
}

impl HasParams for ConvHead {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            p.extend(c.params());
            p.extend(n.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        for (c, n) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            p.extend(c.params_mut());
            p.extend(n.params_mut());
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoveaMode {
    /// 3×3 patches inserted into the peripheral grid.
    Combined,
    /// 14×14 patches for the separate foveal stream.
    Dual,
}

impl FoveaMode {
    pub fn patch_side(self) -> usize {
        match self {
            FoveaMode::Combined => FOVEA_PATCH_COMBINED,
            FoveaMode::Dual => FOVEA_PATCH_DUAL,
        }
    }
}

/// Layer specs for one resolution scale (1 = full size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpecs {
    pub preproc: PreprocConfig,
    pub backbone: Vec<LayerSpec>,
    pub peripheral_head: Vec<LayerSpec>,
    pub foveal_head: Vec<LayerSpec>,
    pub foveal_head_dual: Vec<LayerSpec>,
}

fn head_layer(kernel: (usize, usize), stride: (usize, usize), cin: usize, cout: usize) -> LayerSpec {
    let mut s = LayerSpec::conv(kernel, stride, cin, cout);
    s.dropout_rate = HEAD_DROPOUT;
    s
}

fn head(layers: &[((usize, usize), (usize, usize))], cin: usize) -> Vec<LayerSpec> {
    layers
        .iter()
        .enumerate()
        .map(|(i, &(k, s))| head_layer(k, s, if i == 0 { cin } else { FEATURE_CHANNELS }, FEATURE_CHANNELS))
        .collect()
}

impl EncoderSpecs {
    /// Presets for scales 1, 2 and 4.
    pub fn for_scale(scale: usize) -> Result<Self> {
        let c = FEATURE_CHANNELS;
        let backbone = match scale {
            1 => vec![LayerSpec::conv((8, 8), (4, 4), 3, c), LayerSpec::conv((3, 3), (1, 1), c, c)],
            2 | 4 => vec![LayerSpec::conv((4, 4), (2, 2), 3, c), LayerSpec::conv((3, 3), (1, 1), c, c)],
            _ => return Err(Error::Config(format!("no encoder preset for scale {scale}"))),
        };
        let backbone = backbone.into_iter().map(LayerSpec::frozen).collect();
        let (peripheral_head, foveal_head, foveal_head_dual) = if scale == 4 {
            // backbone: 18×32 → 6×13, 46 → 20
            (
                head(&[((2, 3), (1, 1)); 3], c),
                head(&[((5, 5), (3, 3)), ((3, 3), (1, 1)), ((2, 2), (1, 1))], c),
                head(&[((3, 3), (1, 1)); 3], c),
            )
        } else {
            // backbone: 72×128 or 36×64 → 15×29, 185 or 92 → 43
            (
                head(&[((3, 3), (2, 2)), ((3, 4), (1, 1)), ((3, 5), (1, 1))], c),
                head(&[((5, 5), (3, 3)), ((5, 5), (2, 2)), ((3, 3), (1, 1))], c),
                head(&[((4, 4), (3, 3)), ((1, 1), (1, 1)), ((1, 1), (1, 1))], c),
            )
        };
        Ok(EncoderSpecs {
            preproc: PreprocConfig::for_scale(scale),
            backbone,
            peripheral_head,
            foveal_head,
            foveal_head_dual,
        })
    }

    pub fn foveal_specs(&self, mode: FoveaMode) -> &[LayerSpec] {
        match mode {
            FoveaMode::Combined => &self.foveal_head,
            FoveaMode::Dual => &self.foveal_head_dual,
        }
    }
}

/// Peripheral path after the backbone: head, then bilinear resampling of its
/// output to the 9×16 grid.
#[derive(Clone, Debug)]
pub struct PeripheralEncoder {
    pub head: ConvHead,
    pub resampler: Resampler,
}

impl PeripheralEncoder {
    pub fn new(specs: &[LayerSpec], backbone_out: (usize, usize, usize), seed: u64) -> Result<Self> {
        let trace = shape_trace("peripheral head", specs, backbone_out)?;
        let out = *trace.last().expect("non-empty trace");
        if out.2 != FEATURE_CHANNELS {
            return Err(Error::shape("peripheral head channels", FEATURE_CHANNELS, out.2));
        }
        let head = ConvHead::new("peripheral", specs, backbone_out, out, seed)?;
        let resampler = Resampler::new((out.0, out.1), (GRID_ROWS, GRID_COLS))?;
        Ok(PeripheralEncoder { head, resampler })
    }

    pub fn head_output(&self) -> (usize, usize, usize) {
        self.head.output
    }

    pub fn forward_eval(&self, xs: &[FeatureGrid]) -> Result<Vec<FeatureGrid>> {
        self.head
            .forward_eval(xs)?
            .iter()
            .map(|h| self.resampler.forward(h))
            .collect()
    }

    pub fn forward_train(&mut self, xs: &[FeatureGrid], rng: &mut Rng) -> Result<(Vec<FeatureGrid>, HeadCache)> {
        let (hs, cache) = self.head.forward_train(xs, rng)?;
        let out = hs.iter().map(|h| self.resampler.forward(h)).collect::<Result<Vec<_>>>()?;
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &HeadCache, grads: &[FeatureGrid]) {
        let g: Vec<FeatureGrid> = grads.iter().map(|g| self.resampler.backward(g)).collect();
        self.head.backward(cache, &g);
    }
}

impl HasParams for PeripheralEncoder {
    fn params(&self) -> Vec<&Param> {
        self.head.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.head.params_mut()
    }
}

/// Builds the foveal head for `mode`, rejecting specs that do not produce the
/// mode's patch shape.
pub fn foveal_encoder(
    specs: &[LayerSpec],
    backbone_out: (usize, usize, usize),
    mode: FoveaMode,
    seed: u64,
) -> Result<ConvHead> {
    let side = mode.patch_side();
    ConvHead::new("foveal", specs, backbone_out, (side, side, FEATURE_CHANNELS), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, rgb: [u8; 3]) -> Frame {
        let mut f = Frame::new(h, w, 0.0);
        for y in 0..h {
            for x in 0..w {
                f.put(y, x, rgb);
            }
        }
        f
    }

    #[test]
    fn mean_subtraction_zeroes_matching_channel() {
        let f = gray(144, 256, [124, 0, 0]);
        let mut cfg = PreprocConfig::default();
        cfg.channel_means = [124.0, 116.79, 103.939];
        let x = preprocess_peripheral(&f, &cfg).unwrap();
        assert_eq!(x.shape(), (72, 128, 3));
        assert!((0..72).all(|y| x.get(y, 5, 0) == 0.0));
        assert!((x.get(3, 3, 1) + 116.79).abs() < 1e-12);
    }

    #[test]
    fn same_size_is_mean_subtraction_only() {
        let mut f = Frame::new(72, 128, 0.0);
        for (i, p) in f.pixels.iter_mut().enumerate() {
            *p = (i * 7 % 251) as u8;
        }
        let x = preprocess_peripheral(&f, &PreprocConfig::default()).unwrap();
        for (i, v) in x.values.iter().enumerate() {
            assert_eq!(*v, f.pixels[i] as f64 - CHANNEL_MEANS[i % 3]);
        }
    }

    #[test]
    fn uniform_region_gives_uniform_patch() {
        let f = gray(180, 320, [40, 80, 120]);
        let cfg = PreprocConfig::for_scale(4);
        let r = PixelRect { top: 10, left: 30, bottom: 70, right: 90 };
        let p = crop_and_resize_patch(&f, r, &cfg).unwrap();
        assert_eq!(p.shape(), (46, 46, 3));
        assert!(p.values.chunks(3).all(|c| c == [40.0 - 123.68, 80.0 - 116.79, 120.0 - 103.939]));
        assert_eq!(p, crop_and_resize_patch(&f, r, &cfg).unwrap());
    }

    #[test]
    fn presets_pass_audit() {
        for scale in [1, 2, 4] {
            let s = EncoderSpecs::for_scale(scale).unwrap();
            let p = s.preproc.peripheral;
            let b = shape_trace("backbone", &s.backbone, (p.0, p.1, 3)).unwrap();
            let bo = *b.last().unwrap();
            audit_stack("peripheral", &s.peripheral_head, bo, (3, 7, 8)).unwrap();
            let pi = s.preproc.patch_input;
            let fb = *shape_trace("backbone", &s.backbone, (pi, pi, 3)).unwrap().last().unwrap();
            audit_stack("foveal", &s.foveal_head, fb, (3, 3, 8)).unwrap();
            audit_stack("foveal dual", &s.foveal_head_dual, fb, (14, 14, 8)).unwrap();
        }
        assert!(EncoderSpecs::for_scale(3).is_err());
    }

    #[test]
    fn audit_reports_trace() {
        let specs = vec![LayerSpec::conv((3, 3), (1, 1), 8, 8); 2];
        let err = audit_stack("x", &specs, (5, 5, 8), (3, 3, 8)).unwrap_err();
        assert!(err.to_string().contains("(1, 1, 8)"), "{err}");
        let err = audit_stack("x", &specs, (3, 3, 8), (1, 1, 8)).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn backbone_is_deterministic_and_shaped() {
        let s = EncoderSpecs::for_scale(4).unwrap();
        let b = Backbone::new(&s.backbone, 5).unwrap();
        assert!(b.params().iter().all(|p| !p.trainable));
        let x = FeatureGrid::from_fn(18, 32, 3, |y, x, c| ((y * 3 + x * 5 + c) % 17) as f64 - 8.0);
        let y1 = b.forward(&x).unwrap();
        assert_eq!(y1.shape(), (6, 13, 8));
        assert_eq!(y1, b.forward(&x).unwrap());
        assert!(b.forward(&FeatureGrid::zeros(18, 32, 4)).is_err());
    }

    #[test]
    fn peripheral_output_is_grid_sized() {
        let s = EncoderSpecs::for_scale(4).unwrap();
        let mut enc = PeripheralEncoder::new(&s.peripheral_head, (6, 13, 8), 1).unwrap();
        let x = FeatureGrid::from_fn(6, 13, 8, |y, x, c| ((y + x * c) % 5) as f64 * 0.1);
        let out = enc.forward_eval(std::slice::from_ref(&x)).unwrap();
        assert_eq!(out[0].shape(), (9, 16, 8));
        assert_eq!(enc.head_output(), (3, 7, 8));
        assert_eq!(out, enc.forward_eval(std::slice::from_ref(&x)).unwrap());
        let (t, _) = enc.forward_train(&[x.clone(), x], &mut crate::seed::rng(0)).unwrap();
        assert_eq!(t[0].shape(), (9, 16, 8));
    }

    #[test]
    fn foveal_modes_check_shape() {
        let s = EncoderSpecs::for_scale(4).unwrap();
        assert!(foveal_encoder(&s.foveal_head, (20, 20, 8), FoveaMode::Combined, 0).is_ok());
        assert!(foveal_encoder(&s.foveal_head_dual, (20, 20, 8), FoveaMode::Dual, 0).is_ok());
        assert!(foveal_encoder(&s.foveal_head, (20, 20, 8), FoveaMode::Dual, 0).is_err());
    }
}
