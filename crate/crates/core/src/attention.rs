//! Human-attention prediction from low-resolution frames: shared frozen
//! backbone, three conv layers, a recurrent-conv layer over the 9×16 grid and
//! a softmax over the 144 cells.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention_map::{AttentionMap, GRID_CELLS, GRID_COLS, GRID_ROWS};
use crate::encoders::{preprocess_peripheral, Backbone, ConvHead, EncoderSpecs, PreprocConfig, FEATURE_CHANNELS};
use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::nn::{
    adam_step, AdamConfig, Checkpoint, Conv2d, ConvLstmCell, HasParams, LayerSpec, OptimizerState, Param,
    RecurrentConvState, Resampler,
};
use crate::seed::{derive_seed, rng_for};
use crate::world::VideoClip;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub scale: usize,
    pub preproc: PreprocConfig,
    pub backbone: Vec<LayerSpec>,
    pub backbone_seed: u64,
    pub head: Vec<LayerSpec>,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub seed: u64,
}

impl AttentionConfig {
    pub fn for_scale(scale: usize, backbone_seed: u64, seed: u64) -> Result<Self> {
        let specs = EncoderSpecs::for_scale(scale)?;
        let head = specs
            .peripheral_head
            .iter()
            .map(|s| LayerSpec {
                dropout_rate: 0.0,
                ..s.clone()
            })
            .collect();
        Ok(AttentionConfig {
            scale,
            preproc: specs.preproc,
            backbone: specs.backbone,
            backbone_seed,
            head,
            hidden_channels: 8,
            kernel: 3,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionTrainConfig {
    pub epochs: usize,
    /// Frames per truncated-backpropagation window.
    pub window_frames: usize,
    pub adam: AdamConfig,
    /// Restore the epoch with the lowest validation KL at the end.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for AttentionTrainConfig {
    fn default() -> Self {
        AttentionTrainConfig {
            epochs: 10,
            window_frames: 50,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            keep_best: true,
            seed: 0,
        }
    }
}

/// Recurrent state tagged with the clip it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionState {
    pub clip: Option<String>,
    pub recurrent: RecurrentConvState,
}

#[derive(Clone, Debug)]
pub struct AttentionModule {
    pub config: AttentionConfig,
    pub backbone: Backbone,
    pub head: ConvHead,
    pub upsample: Resampler,
    pub lstm: ConvLstmCell,
    /// 1×1 conv from hidden channels to one logit per cell.
    pub readout: Conv2d,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Backbone features for every frame of a clip.
pub fn backbone_features(backbone: &Backbone, preproc: &PreprocConfig, clip: &VideoClip) -> Result<Vec<FeatureGrid>> {
    clip.frames
        .iter()
        .map(|f| backbone.forward(&preprocess_peripheral(f, preproc)?))
        .collect()
}

impl AttentionModule {
    pub fn new(config: AttentionConfig) -> Result<Self> {
        let backbone = Backbone::new(&config.backbone, config.backbone_seed)?;
        let bo = backbone.output_shape(config.preproc.peripheral)?;
        let head = ConvHead::new(
            "attention.head",
            &config.head,
            bo,
            (3, 7, FEATURE_CHANNELS),
            derive_seed(config.seed, "attention.head"),
        )?;
        let upsample = Resampler::new((3, 7), (GRID_ROWS, GRID_COLS))?;
        let lstm = ConvLstmCell::new(
            "attention.lstm",
            (GRID_ROWS, GRID_COLS),
            FEATURE_CHANNELS,
            config.hidden_channels,
            config.kernel,
            derive_seed(config.seed, "attention.lstm"),
        )?;
        let readout = Conv2d::new(
            "attention.readout",
            LayerSpec::conv((1, 1), (1, 1), config.hidden_channels, 1),
            derive_seed(config.seed, "attention.readout"),
        )?;
        Ok(AttentionModule {
            config,
            backbone,
            head,
            upsample,
            lstm,
            readout,
        })
    }

    pub fn reset_state(&self) -> AttentionState {
        AttentionState {
            clip: None,
            recurrent: self.lstm.zero_state(),
        }
    }

    pub fn backbone_forward(&self, low_res: &FeatureGrid) -> Result<FeatureGrid> {
        let p = self.config.preproc.peripheral;
        low_res.expect_shape("backbone input", (p.0, p.1, 3))?;
        self.backbone.forward(low_res)
    }

    fn logits(&self, hidden: &FeatureGrid) -> Result<Vec<f64>> {
        Ok(self.readout.forward(hidden)?.values)
    }

    /// One recurrent step. The state must be fresh or come from `clip`.
    pub fn predict_attention(
        &self,
        features: &FeatureGrid,
        state: &mut AttentionState,
        clip: &str,
        frame: usize,
    ) -> Result<AttentionMap> {
        if let Some(owner) = &state.clip {
            if owner != clip {
                return Err(Error::StaleState {
                    state_clip: state.clip.clone(),
                    input_clip: clip.to_string(),
                });
            }
        }
        let h = self.head.forward_eval(std::slice::from_ref(features))?.remove(0);
        let up = self.upsample.forward(&h)?;
        let (hidden, next, _) = self.lstm.step(&up, &state.recurrent)?;
        state.recurrent = next;
        state.clip = Some(clip.to_string());
        Ok(AttentionMap {
            frame,
            probs: softmax(&self.logits(&hidden)?),
        })
    }

    /// Maps for a whole sequence from a fresh state.
    pub fn predict_sequence(&self, clip: &str, features: &[FeatureGrid]) -> Result<Vec<AttentionMap>> {
        let mut state = self.reset_state();
        features
            .iter()
            .enumerate()
            .map(|(t, f)| self.predict_attention(f, &mut state, clip, t))
            .collect()
    }

    pub fn predict_clip(&self, clip: &VideoClip) -> Result<Vec<AttentionMap>> {
        let feats = backbone_features(&self.backbone, &self.config.preproc, clip)?;
        self.predict_sequence(&clip.id, &feats)
    }

    /// Mean KL(truth ‖ prediction) over a clip, evaluated from a fresh state.
    pub fn mean_kl(&self, clip: &VideoClip, features: &[FeatureGrid]) -> Result<f64> {
        if clip.gaze.is_empty() {
            return Err(Error::MissingGaze);
        }
        let maps = self.predict_sequence(&clip.id, features)?;
        Ok(maps.iter().zip(&clip.gaze).map(|(p, q)| q.kl_divergence(p)).sum::<f64>() / maps.len() as f64)
    }

    /// Forward and backward over one window in training mode; accumulates
    /// gradients and returns the window's mean KL.
    fn train_window(&mut self, features: &[FeatureGrid], truth: &[AttentionMap], rng: &mut crate::seed::Rng) -> Result<f64> {
        let n = features.len();
        let (hs, head_cache) = self.head.forward_train(features, rng)?;
        let mut state = self.lstm.zero_state();
        let mut caches = Vec::with_capacity(n);
        let mut hiddens = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for h in &hs {
            let up = self.upsample.forward(h)?;
            let (hidden, next, cache) = self.lstm.step(&up, &state)?;
            state = next;
            probs.push(softmax(&self.logits(&hidden)?));
            caches.push(cache);
            hiddens.push(hidden);
        }
        let mut loss = 0.0;
        let mut d_hidden_next = FeatureGrid::zeros(GRID_ROWS, GRID_COLS, self.config.hidden_channels);
        let mut d_cell_next = d_hidden_next.clone();
        let mut d_head = vec![FeatureGrid::zeros(3, 7, FEATURE_CHANNELS); n];
        for t in (0..n).rev() {
            let q = &truth[t].probs;
            let p = &probs[t];
            loss += q
                .iter()
                .zip(p)
                .filter(|(q, _)| **q > 0.0)
                .map(|(q, p)| q * (q / p.max(1e-300)).ln())
                .sum::<f64>();
            let d_logits: Vec<f64> = p.iter().zip(q).map(|(p, q)| (p - q) / n as f64).collect();
            let d_logits = FeatureGrid::from_vec(GRID_ROWS, GRID_COLS, 1, d_logits)?;
            let mut dh = self
                .readout
                .backward(&hiddens[t], &d_logits, true)
                .expect("input gradient requested");
            dh.add_assign(&d_hidden_next);
            let (dx, dh_prev, dc_prev) = self.lstm.backward_step(&caches[t], &dh, &d_cell_next);
            d_hidden_next = dh_prev;
            d_cell_next = dc_prev;
            d_head[t] = self.upsample.backward(&dx);
        }
        self.head.backward(&head_cache, &d_head);
        Ok(loss / n as f64)
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.head.params_mut();
        p.extend(self.lstm.params_mut());
        p.extend(self.readout.params_mut());
        p
    }

    pub fn checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::from_params("attention", self.params());
        ck.metadata = serde_json::json!({
            "config": self.config,
            "extra": metadata,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "attention" {
            return Err(Error::CorruptCheckpoint(format!("expected attention checkpoint, got {}", ck.kind)));
        }
        let config: AttentionConfig = serde_json::from_value(ck.metadata["config"].clone())
            .map_err(|e| Error::CorruptCheckpoint(format!("attention config: {e}")))?;
        let mut m = AttentionModule::new(config)?;
        ck.apply(m.params_mut())?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl HasParams for AttentionModule {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.head.params());
        p.extend(self.lstm.params());
        p.extend(self.readout.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.backbone.params_mut();
        p.extend(self.head.params_mut());
        p.extend(self.lstm.params_mut());
        p.extend(self.readout.params_mut());
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionEpoch {
    pub epoch: usize,
    pub train_kl: f64,
    pub validation_kl: Option<f64>,
}

/// Consecutive windows covering each clip, as `(clip, start, end)`.
pub fn clip_windows(lengths: &[usize], window: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (c, &len) in lengths.iter().enumerate() {
        let mut s = 0;
        while s < len {
            out.push((c, s, (s + window).min(len)));
            s += window;
        }
    }
    out
}

/// Trains the attention module with KL loss; the backbone stays frozen.
pub fn train_attention(
    module: &mut AttentionModule,
    train: &[VideoClip],
    validation: &[VideoClip],
    config: &AttentionTrainConfig,
) -> Result<Vec<AttentionEpoch>> {
    use rand::seq::SliceRandom;

    if train.is_empty() || train.iter().chain(validation).any(|c| c.gaze.len() != c.frames.len()) {
        return Err(Error::MissingGaze);
    }
    let feats = |clips: &[VideoClip]| -> Result<Vec<Vec<FeatureGrid>>> {
        clips
            .iter()
            .map(|c| backbone_features(&module.backbone, &module.config.preproc, c))
            .collect()
    };
    let train_feats = feats(train)?;
    let val_feats = feats(validation)?;
    let lengths: Vec<usize> = train.iter().map(|c| c.len()).collect();
    let mut windows = clip_windows(&lengths, config.window_frames.max(1));
    let mut opt = OptimizerState::new(config.adam);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, AttentionModule)> = None;
    for epoch in 0..config.epochs {
        let mut rng = rng_for(config.seed, &format!("attention.epoch.{epoch}"));
        windows.shuffle(&mut rng);
        let mut total = 0.0;
        for &(c, s, e) in &windows {
            module.zero_grads();
            total += module.train_window(&train_feats[c][s..e], &train[c].gaze[s..e], &mut rng)?;
            adam_step(&mut module.trainable_params_mut(), &mut opt)?;
        }
        let validation_kl = if validation.is_empty() {
            None
        } else {
            let mut s = 0.0;
            for (clip, f) in validation.iter().zip(&val_feats) {
                s += module.mean_kl(clip, f)?;
            }
            Some(s / validation.len() as f64)
        };
        log.push(AttentionEpoch {
            epoch,
            train_kl: total / windows.len() as f64,
            validation_kl,
        });
        if let (true, Some(kl)) = (config.keep_best, validation_kl) {
            if best.as_ref().map_or(true, |b| kl < b.0) {
                best = Some((kl, module.clone()));
            }
        }
    }
    if let Some((_, m)) = best {
        *module = m;
    }
    Ok(log)
}

/// Gradient of the per-frame KL loss with respect to the 144 logits.
pub fn kl_logit_gradient(truth: &AttentionMap, logits: &[f64]) -> Vec<f64> {
    softmax(logits).iter().zip(&truth.probs).map(|(p, q)| p - q).collect()
}

pub fn uniform_kl(truth: &AttentionMap) -> f64 {
    truth.kl_divergence(&AttentionMap::uniform(truth.frame))
}

const _: () = assert!(GRID_CELLS == GRID_ROWS * GRID_COLS);

#[cfg(test)]
mod tests {
    use super::*;

    fn module() -> AttentionModule {
        AttentionModule::new(AttentionConfig::for_scale(4, 1, 2).unwrap()).unwrap()
    }

    fn features(n: usize) -> Vec<FeatureGrid> {
        (0..n)
            .map(|t| FeatureGrid::from_fn(6, 13, 8, |y, x, c| ((y * 7 + x * 3 + c + t) % 11) as f64 * 0.2))
            .collect()
    }

    #[test]
    fn zeroed_readout_is_uniform() {
        let mut m = module();
        m.readout.weight.value.iter_mut().for_each(|w| *w = 0.0);
        let maps = m.predict_sequence("a", &features(3)).unwrap();
        for map in maps {
            assert!(map.probs.iter().all(|p| (p - 1.0 / 144.0).abs() < 1e-15));
        }
    }

    #[test]
    fn maps_are_distributions() {
        let m = module();
        for map in m.predict_sequence("a", &features(4)).unwrap() {
            map.validate().unwrap();
        }
    }

    #[test]
    fn stale_state_rejected() {
        let m = module();
        let f = features(1);
        let mut s = m.reset_state();
        m.predict_attention(&f[0], &mut s, "a", 0).unwrap();
        assert!(matches!(
            m.predict_attention(&f[0], &mut s, "b", 0),
            Err(Error::StaleState { .. })
        ));
    }

    #[test]
    fn backbone_rejects_wrong_shape() {
        assert!(module().backbone_forward(&FeatureGrid::zeros(20, 32, 3)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = module();
        let ck = m.checkpoint(serde_json::Value::Null);
        let m2 = AttentionModule::from_checkpoint(&ck).unwrap();
        assert_eq!(m.fingerprint(), m2.fingerprint());
    }

    #[test]
    fn kl_gradient_matches_finite_difference() {
        let truth = AttentionMap::from_weights(0, (0..144).map(|i| (i % 7) as f64 + 0.5).collect()).unwrap();
        let logits: Vec<f64> = (0..144).map(|i| ((i * 13) % 17) as f64 * 0.1).collect();
        let g = kl_logit_gradient(&truth, &logits);
        let loss = |l: &[f64]| {
            let p = AttentionMap {
                frame: 0,
                probs: softmax(l),
            };
            truth.kl_divergence(&p)
        };
        for i in [0, 50, 143] {
            let mut a = logits.clone();
            let mut b = logits.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn windows_cover_clips() {
        let w = clip_windows(&[10, 5], 4);
        assert_eq!(w, vec![(0, 0, 4), (0, 4, 8), (0, 8, 10), (1, 0, 4), (1, 4, 5)]);
    }
}
