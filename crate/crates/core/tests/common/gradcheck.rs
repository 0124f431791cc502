//! Finite-difference checks of every backward pass, shared by the gradient
//! tests and the acceptance run.

use foveadrive::encoders::{foveal_encoder, EncoderSpecs, FoveaMode, PeripheralEncoder};
use foveadrive::fovea::{FoveaPolicy, FoveaSelectionConfig};
use foveadrive::nn::{Activation, BatchNorm, Conv2d, ConvLstmCell, Dense, Dropout, HasParams, LayerSpec, Param, Resampler};
use foveadrive::planner::{insert_fovea_features, DrivingModel, ModelConfig, PlannerVariant};
use foveadrive::seed::rng;
use foveadrive::world::{generate_clip, WorldConfig};
use foveadrive::FeatureGrid;
use rand::Rng as _;

const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-4;
const PER_TENSOR: usize = 24;
/// Central differences of an O(10) loss carry about 1e-8 of rounding noise at
/// this step; smaller disagreements are not counted.
const NOISE_FLOOR: f64 = 5e-8;

fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> FeatureGrid {
    let mut r = rng(seed);
    FeatureGrid::from_fn(h, w, c, |_, _, _| r.gen_range(-1.0..1.0))
}

fn positive_grid(h: usize, w: usize, c: usize, seed: u64) -> FeatureGrid {
    let mut r = rng(seed);
    FeatureGrid::from_fn(h, w, c, |_, _, _| r.gen_range(0.0..1.0))
}

fn weights(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Evenly spaced entries of a tensor of length `n`.
fn probe(n: usize) -> Vec<usize> {
    let k = n.min(PER_TENSOR);
    (0..k).map(|i| i * n / k).collect()
}

/// Outcome of a group of finite-difference comparisons.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    fn compare(&mut self, what: &str, analytic: f64, numeric: f64) {
        self.checked += 1;
        if (analytic - numeric).abs() < NOISE_FLOOR {
            return;
        }
        let e = rel_err(analytic, numeric);
        self.max_rel_err = self.max_rel_err.max(e);
        if !(e < TOLERANCE) {
            self.failures.push(format!("{what}: analytic {analytic:e} numeric {numeric:e} rel err {e:e}"));
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }

    #[allow(dead_code)]
    pub fn assert_ok(&self) {
        assert!(self.checked > 0, "nothing was checked");
        assert!(self.failures.is_empty(), "{} failures, first: {}", self.failures.len(), self.failures[0]);
    }
}

/// Compares accumulated parameter gradients against central differences of `loss`.
fn check_params<M>(rep: &mut GradReport, model: &mut M, params: impl Fn(&mut M) -> Vec<&mut Param>, loss: impl Fn(&mut M) -> f64) {
    let analytic: Vec<(String, Vec<f64>)> = params(model)
        .into_iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();
    for (name, grad) in &analytic {
        for j in probe(grad.len()) {
            let set = |m: &mut M, delta: f64| {
                for p in params(m) {
                    if &p.name == name {
                        p.value[j] += delta;
                    }
                }
            };
            set(model, STEP);
            let up = loss(model);
            set(model, -2.0 * STEP);
            let down = loss(model);
            set(model, STEP);
            rep.compare(&format!("{name}[{j}]"), grad[j], (up - down) / (2.0 * STEP));
        }
    }
}

fn check_input(rep: &mut GradReport, what: &str, x: &FeatureGrid, analytic: &FeatureGrid, loss: impl Fn(&FeatureGrid) -> f64) {
    for j in probe(x.len()) {
        let mut a = x.clone();
        a.values[j] += STEP;
        let mut b = x.clone();
        b.values[j] -= STEP;
        rep.compare(&format!("{what} input[{j}]"), analytic.values[j], (loss(&a) - loss(&b)) / (2.0 * STEP));
    }
}

pub fn conv_layers() -> GradReport {
    let mut rep = GradReport::default();
    for (i, spec) in [
        LayerSpec::conv((3, 3), (1, 1), 3, 4),
        LayerSpec::conv((4, 4), (2, 2), 3, 5),
        LayerSpec::conv((2, 3), (1, 2), 2, 3),
        LayerSpec::conv((3, 3), (1, 1), 4, 4).same_padded(),
    ]
    .into_iter()
    .enumerate()
    {
        let mut conv = Conv2d::new("c", spec.clone(), i as u64).unwrap();
        let x = random_grid(9, 11, spec.in_channels, 10 + i as u64);
        let y = conv.forward(&x).unwrap();
        let w = weights(y.len(), 20 + i as u64);
        let gy = FeatureGrid::from_vec(y.height, y.width, y.channels, w.clone()).unwrap();
        conv.zero_grads();
        let gx = conv.backward(&x, &gy, true).unwrap();
        check_input(&mut rep, "conv", &x, &gx, |x| dot(&conv.forward(x).unwrap().values, &w));
        check_params(&mut rep, &mut conv, |c| c.params_mut(), |c| dot(&c.forward(&x).unwrap().values, &w));
    }
    rep
}

pub fn dense_layers() -> GradReport {
    let mut rep = GradReport::default();
    for (i, act) in [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Sigmoid].into_iter().enumerate() {
        let mut d = Dense::new("d", 7, 5, act, true, i as u64);
        let x = weights(7, 30 + i as u64);
        let w = weights(5, 40 + i as u64);
        let y = d.forward(&x).unwrap();
        d.zero_grads();
        let gx = d.backward(&x, &y, &w);
        for j in 0..x.len() {
            let mut a = x.clone();
            a[j] += STEP;
            let mut b = x.clone();
            b[j] -= STEP;
            let n = (dot(&d.forward(&a).unwrap(), &w) - dot(&d.forward(&b).unwrap(), &w)) / (2.0 * STEP);
            rep.compare(&format!("dense {act:?} input[{j}]"), gx[j], n);
        }
        check_params(&mut rep, &mut d, |d| d.params_mut(), |d| dot(&d.forward(&x).unwrap(), &w));
    }
    rep
}

pub fn batch_norm_over_batch() -> GradReport {
    let mut rep = GradReport::default();
    let mut bn = BatchNorm::new("bn", 3, true);
    let xs: Vec<FeatureGrid> = (0..3).map(|i| random_grid(4, 5, 3, 50 + i)).collect();
    let ws: Vec<Vec<f64>> = (0..3).map(|i| weights(60, 60 + i)).collect();
    let loss = |bn: &mut BatchNorm, xs: &[FeatureGrid]| -> f64 {
        let (ys, _) = bn.forward_train(xs).unwrap();
        ys.iter().zip(&ws).map(|(y, w)| dot(&y.values, w)).sum()
    };
    // Perturb gamma/beta away from the identity so every term matters.
    for (k, p) in bn.params_mut().into_iter().enumerate() {
        if p.trainable {
            for (j, v) in p.value.iter_mut().enumerate() {
                *v += 0.1 * (k + j) as f64;
            }
        }
    }
    let (_, cache) = bn.forward_train(&xs).unwrap();
    let grads: Vec<FeatureGrid> = ws.iter().map(|w| FeatureGrid::from_vec(4, 5, 3, w.clone()).unwrap()).collect();
    bn.zero_grads();
    let gx = bn.backward(&cache, &grads);
    for b in 0..xs.len() {
        let probe_bn = bn.clone();
        check_input(&mut rep, "batch norm", &xs[b], &gx[b], |x| {
            let mut v = xs.clone();
            v[b] = x.clone();
            loss(&mut probe_bn.clone(), &v)
        });
    }
    check_params(&mut rep, &mut bn, |b| b.params_mut(), |b| loss(b, &xs));
    rep
}

pub fn dropout_with_fixed_mask() -> GradReport {
    let mut rep = GradReport::default();
    let d = Dropout::new(0.2);
    let x = random_grid(5, 6, 2, 70);
    let w = weights(x.len(), 71);
    let (_, mask) = d.forward_train(&x, &mut rng(3));
    let gy = FeatureGrid::from_vec(5, 6, 2, w.clone()).unwrap();
    let gx = Dropout::backward(&mask, &gy);
    check_input(&mut rep, "dropout", &x, &gx, |x| {
        let (y, _) = d.forward_train(x, &mut rng(3));
        dot(&y.values, &w)
    });
    rep
}

pub fn bilinear_resample() -> GradReport {
    let mut rep = GradReport::default();
    for (src, dst) in [((3, 7), (9, 16)), ((20, 20), (9, 16)), ((5, 5), (5, 5))] {
        let r = Resampler::new(src, dst).unwrap();
        let x = random_grid(src.0, src.1, 2, 80);
        let w = weights(dst.0 * dst.1 * 2, 81);
        let gy = FeatureGrid::from_vec(dst.0, dst.1, 2, w.clone()).unwrap();
        check_input(&mut rep, "resample", &x, &r.backward(&gy), |x| dot(&r.forward(x).unwrap().values, &w));
    }
    rep
}

pub fn recurrent_conv_through_time() -> GradReport {
    let mut rep = GradReport::default();
    let mut cell = ConvLstmCell::new("lstm", (4, 5), 3, 4, 3, 9).unwrap();
    let xs: Vec<FeatureGrid> = (0..3).map(|t| random_grid(4, 5, 3, 90 + t)).collect();
    let ws: Vec<Vec<f64>> = (0..3).map(|t| weights(4 * 5 * 4, 95 + t)).collect();
    let loss = |cell: &ConvLstmCell, xs: &[FeatureGrid]| -> f64 {
        let mut s = cell.zero_state();
        let mut total = 0.0;
        for (x, w) in xs.iter().zip(&ws) {
            let (h, next, _) = cell.step(x, &s).unwrap();
            total += dot(&h.values, w);
            s = next;
        }
        total
    };
    let mut s = cell.zero_state();
    let mut caches = Vec::new();
    for x in &xs {
        let (_, next, cache) = cell.step(x, &s).unwrap();
        caches.push(cache);
        s = next;
    }
    cell.zero_grads();
    let mut dh = FeatureGrid::zeros(4, 5, 4);
    let mut dc = FeatureGrid::zeros(4, 5, 4);
    let mut dxs = vec![FeatureGrid::zeros(4, 5, 3); 3];
    for t in (0..3).rev() {
        let mut g = FeatureGrid::from_vec(4, 5, 4, ws[t].clone()).unwrap();
        for (a, b) in g.values.iter_mut().zip(&dh.values) {
            *a += b;
        }
        let (dx, dhp, dcp) = cell.backward_step(&caches[t], &g, &dc);
        dxs[t] = dx;
        dh = dhp;
        dc = dcp;
    }
    for t in 0..3 {
        let frozen = cell.clone();
        check_input(&mut rep, "recurrent", &xs[t], &dxs[t], |x| {
            let mut v = xs.clone();
            v[t] = x.clone();
            loss(&frozen, &v)
        });
    }
    check_params(&mut rep, &mut cell, |c| c.params_mut(), |c| loss(c, &xs));
    rep
}

pub fn fovea_insertion_routes_to_max() -> GradReport {
    let mut rep = GradReport::default();
    let patches = vec![random_grid(3, 3, 8, 100), random_grid(3, 3, 8, 101)];
    let corners = vec![(2, 4), (3, 5)];
    let w = weights(9 * 16 * 8, 102);
    let ins = insert_fovea_features(&patches, &corners).unwrap();
    let gy = FeatureGrid::from_vec(9, 16, 8, w.clone()).unwrap();
    let g = ins.backward(&gy, &corners);
    for k in 0..2 {
        check_input(&mut rep, "insertion", &patches[k], &g[k], |p| {
            let mut v = patches.clone();
            v[k] = p.clone();
            dot(&insert_fovea_features(&v, &corners).unwrap().grid.values, &w)
        });
    }
    rep
}

pub fn encoder_heads() -> GradReport {
    let mut rep = GradReport::default();
    let specs = EncoderSpecs::for_scale(4).unwrap();
    let mut periph = PeripheralEncoder::new(&specs.peripheral_head, (6, 13, 8), 5).unwrap();
    let xs: Vec<FeatureGrid> = (0..3).map(|i| positive_grid(6, 13, 8, 110 + i)).collect();
    let ws: Vec<Vec<f64>> = (0..3).map(|i| weights(9 * 16 * 8, 120 + i)).collect();
    let loss = |e: &mut PeripheralEncoder| -> f64 {
        let (ys, _) = e.forward_train(&xs, &mut rng(7)).unwrap();
        ys.iter().zip(&ws).map(|(y, w)| dot(&y.values, w)).sum()
    };
    let (_, cache) = periph.forward_train(&xs, &mut rng(7)).unwrap();
    let grads: Vec<FeatureGrid> = ws.iter().map(|w| FeatureGrid::from_vec(9, 16, 8, w.clone()).unwrap()).collect();
    periph.zero_grads();
    periph.backward(&cache, &grads);
    check_params(&mut rep, &mut periph, |e| e.params_mut(), loss);

    for mode in [FoveaMode::Combined, FoveaMode::Dual] {
        let mut head = foveal_encoder(specs.foveal_specs(mode), (20, 20, 8), mode, 6).unwrap();
        let side = mode.patch_side();
        let xs: Vec<FeatureGrid> = (0..4).map(|i| positive_grid(20, 20, 8, 130 + i)).collect();
        let ws: Vec<Vec<f64>> = (0..4).map(|i| weights(side * side * 8, 140 + i)).collect();
        let (_, cache) = head.forward_train(&xs, &mut rng(8)).unwrap();
        let grads: Vec<FeatureGrid> = ws.iter().map(|w| FeatureGrid::from_vec(side, side, 8, w.clone()).unwrap()).collect();
        head.zero_grads();
        head.backward(&cache, &grads);
        check_params(&mut rep, &mut head, |h| h.params_mut(), |h| {
            let (ys, _) = h.forward_train(&xs, &mut rng(8)).unwrap();
            ys.iter().zip(&ws).map(|(y, w)| dot(&y.values, w)).sum()
        });
    }
    rep
}

fn full_model(variant: PlannerVariant, policy: FoveaPolicy, lengths: &[usize]) -> GradReport {
    let mut rep = GradReport::default();
    let world = WorldConfig {
        clip_seconds: 0.3,
        ..WorldConfig::toy(4)
    };
    let clip = generate_clip(&world, 17).unwrap();
    assert_eq!(clip.len(), 3);
    let fovea = (policy != FoveaPolicy::None).then(|| FoveaSelectionConfig::new(policy, 60, 4));
    let mut config = ModelConfig::new(variant, 4, fovea, 21).unwrap();
    config.speed_scale = 7.0;
    config.speed_offset = 20.0;
    let mut model = DrivingModel::new(config).unwrap();
    let mut r = rng(5);
    let inputs: Vec<_> = clip
        .frames
        .iter()
        .map(|f| {
            let cells = model.select(None, &mut r).unwrap();
            model.prepare_frame(f, None, &cells).unwrap()
        })
        .collect();
    let w = [0.7, -1.3, 0.9];
    let loss = |m: &mut DrivingModel| -> f64 {
        let (p, _) = m.forward_train_batch(&inputs, lengths, &mut rng(11)).unwrap();
        dot(&p, &w)
    };
    let (_, trace) = model.forward_train_batch(&inputs, lengths, &mut rng(11)).unwrap();
    model.zero_grads();
    model.backward(Some(&trace), &w).unwrap();
    check_params(&mut rep, &mut model, |m| m.trainable_params_mut(), loss);
    rep
}

pub fn full_combined_model() -> GradReport {
    full_model(PlannerVariant::Combined, FoveaPolicy::Random, &[3])
}

pub fn full_combined_model_central_foveae() -> GradReport {
    full_model(PlannerVariant::Combined, FoveaPolicy::Central, &[3])
}

pub fn full_dual_model() -> GradReport {
    full_model(PlannerVariant::Dual, FoveaPolicy::Random, &[3])
}

pub fn full_periphery_only_model() -> GradReport {
    full_model(PlannerVariant::PeripheryOnly, FoveaPolicy::None, &[3])
}

/// Two sequences in one batch: the recurrent state and its gradient reset
/// at the boundary.
pub fn full_combined_model_two_sequences() -> GradReport {
    full_model(PlannerVariant::Combined, FoveaPolicy::Random, &[2, 1])
}
