//! Driving-model training: each Adam step sees a batch of truncated windows
//! drawn from different clips; backbone and attention module stay frozen.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionModule;
use crate::attention_map::AttentionMap;
use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::nn::{adam_step, clip_grad_norm, AdamConfig, HasParams, OptimizerState};
use crate::planner::{forward_clip, DrivingModel, ModelConfig};
use crate::seed::{derive_seed, rng, rng_for};
use crate::world::VideoClip;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Frames per truncated-backpropagation window.
    pub window_frames: usize,
    /// Windows per step, each from an independently drawn clip.
    pub windows_per_step: usize,
    pub adam: AdamConfig,
    /// Cosine decay of the learning rate over all steps down to this
    /// fraction of the initial rate; 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub max_grad_norm: f64,
    /// Fit the output offset / scale to the training targets.
    pub normalize_speed: bool,
    /// Restore the epoch with the lowest validation loss at the end.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            steps_per_epoch: 100,
            window_frames: 25,
            windows_per_step: 4,
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            final_lr_fraction: 0.1,
            max_grad_norm: 5.0,
            normalize_speed: true,
            keep_best: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub validation_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub initial_validation_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub backbone_hash: String,
    pub attention_hash: Option<String>,
}

/// Attention maps for every frame of each clip, from a fresh state per clip.
pub fn attention_maps(attention: &AttentionModule, clips: &[VideoClip]) -> Result<Vec<Vec<AttentionMap>>> {
    clips.iter().map(|c| attention.predict_clip(c)).collect()
}

/// Seed of the fovea sampler for one evaluated sequence.
pub fn sequence_seed(model: &DrivingModel, clip: &str, start: usize) -> u64 {
    let base = model.config.fovea.as_ref().map_or(model.config.seed, |f| f.seed);
    crate::seed::derive_seed_n(base, clip, start as u64)
}

/// Mean squared normalized error and MAE over target frames, eval mode.
pub fn validation_loss(
    model: &DrivingModel,
    clips: &[VideoClip],
    maps: Option<&[Vec<AttentionMap>]>,
) -> Result<(f64, f64)> {
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut n = 0usize;
    let scale = model.config.speed_scale;
    for (i, clip) in clips.iter().enumerate() {
        let mut r = rng(sequence_seed(model, &clip.id, 0));
        let pred = forward_clip(model, clip, maps.map(|m| m[i].as_slice()), &mut r)?;
        for (p, y) in pred.predictions.iter().zip(&pred.targets) {
            if let Some(y) = y {
                se += ((p - y) / scale).powi(2);
                ae += (p.max(0.0) - y).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyTargets);
    }
    Ok((se / n as f64, ae / n as f64))
}

fn target_stats(clips: &[VideoClip], horizon: usize) -> (f64, f64) {
    let ys: Vec<f64> = clips.iter().flat_map(|c| c.speed.iter().skip(horizon).copied()).collect();
    let n = ys.len().max(1) as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-6))
}

/// Learning rate at a global step under the cosine schedule.
pub fn scheduled_lr(tc: &TrainConfig, step: usize) -> f64 {
    let total = (tc.epochs * tc.steps_per_epoch).max(1) as f64;
    let progress = (step as f64 / total).min(1.0);
    let f = tc.final_lr_fraction + (1.0 - tc.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    tc.adam.learning_rate * f
}

/// Trains a driving model. Gaze-driven policies need `attention`.
pub fn train(
    mut config: ModelConfig,
    attention: Option<&AttentionModule>,
    train_clips: &[VideoClip],
    validation: &[VideoClip],
    tc: &TrainConfig,
) -> Result<(DrivingModel, TrainLog)> {
    let needs = config.fovea.as_ref().is_some_and(|f| f.policy.needs_attention());
    if needs && attention.is_none() {
        let label = config.fovea.as_ref().map(|f| f.policy.label()).unwrap_or_default();
        return Err(Error::MissingAttention(label));
    }
    let h = config.horizon;
    if let Some(c) = train_clips.iter().chain(validation).find(|c| c.len() <= h) {
        return Err(Error::ClipTooShort {
            clip: c.id.clone(),
            frames: c.len(),
            horizon: h,
        });
    }
    if train_clips.is_empty() {
        return Err(Error::EmptyTargets);
    }
    if tc.normalize_speed {
        (config.speed_offset, config.speed_scale) = target_stats(train_clips, h);
    }
    let attention = attention.filter(|_| needs);
    let mut model = DrivingModel::new(config)?;
    let backbone_hash = model.backbone.fingerprint();
    let attention_hash = attention.map(|a| a.fingerprint());

    let periph: Vec<Vec<FeatureGrid>> = train_clips
        .iter()
        .map(|c| c.frames.iter().map(|f| model.peripheral_features(f)).collect())
        .collect::<Result<_>>()?;
    let train_maps = attention.map(|a| attention_maps(a, train_clips)).transpose()?;
    let val_maps = attention.map(|a| attention_maps(a, validation)).transpose()?;
    let validate = |m: &DrivingModel| -> Result<Option<(f64, f64)>> {
        if validation.is_empty() {
            return Ok(None);
        }
        validation_loss(m, validation, val_maps.as_deref()).map(Some)
    };

    let initial = validate(&model)?;
    let mut opt = OptimizerState::new(tc.adam);
    let mut epochs = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, DrivingModel)> = None;
    let scale = model.config.speed_scale;
    for epoch in 0..tc.epochs {
        let mut r = rng_for(tc.seed, &format!("train.epoch.{epoch}"));
        let mut total = 0.0;
        for step in 0..tc.steps_per_epoch {
            opt.config.learning_rate = scheduled_lr(tc, epoch * tc.steps_per_epoch + step);
            let mut inputs = Vec::new();
            let mut lengths = Vec::new();
            let mut ys = Vec::new();
            for _ in 0..tc.windows_per_step.max(1) {
                let c = r.gen_range(0..train_clips.len());
                let clip = &train_clips[c];
                let usable = clip.len() - h;
                let win = tc.window_frames.clamp(1, usable);
                let start = r.gen_range(0..=usable - win);
                for t in start..start + win {
                    let map = train_maps.as_ref().map(|m| &m[c][t]);
                    let cells = model.select(map, &mut r)?;
                    inputs.push(model.prepare_frame(&clip.frames[t], Some(periph[c][t].clone()), &cells)?);
                }
                lengths.push(win);
                ys.extend_from_slice(&clip.speed[start + h..start + h + win]);
            }
            model.zero_grads();
            let (preds, trace) = model.forward_train_batch(&inputs, &lengths, &mut r)?;
            let n = ys.len() as f64;
            let mut loss = 0.0;
            let d: Vec<f64> = preds
                .iter()
                .zip(&ys)
                .map(|(p, y)| {
                    let e = (p - y) / scale;
                    loss += e * e;
                    2.0 * e / (scale * n)
                })
                .collect();
            total += loss / n;
            model.backward(Some(&trace), &d)?;
            let mut params = model.trainable_params_mut();
            clip_grad_norm(&mut params, tc.max_grad_norm);
            adam_step(&mut params, &mut opt)?;
        }
        let v = validate(&model)?;
        epochs.push(EpochLog {
            epoch,
            train_loss: total / tc.steps_per_epoch.max(1) as f64,
            validation_loss: v.map(|v| v.0),
            validation_mae: v.map(|v| v.1),
        });
        if tc.keep_best {
            if let Some((loss, _)) = v {
                if best.as_ref().map_or(true, |b| loss < b.0) {
                    best = Some((loss, epoch, model.clone()));
                }
            }
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, m)) = best {
        model = m;
    }
    if model.backbone.fingerprint() != backbone_hash {
        return Err(Error::Config("backbone parameters changed during training".into()));
    }
    if let (Some(a), Some(h)) = (attention, &attention_hash) {
        if &a.fingerprint() != h {
            return Err(Error::Config("attention parameters changed during training".into()));
        }
    }
    Ok((
        model,
        TrainLog {
            config: tc.clone(),
            initial_validation_loss: initial.map(|v| v.0),
            epochs,
            best_epoch,
            backbone_hash,
            attention_hash,
        },
    ))
}

/// Derived seed for the `i`-th repetition of an experiment.
pub fn repetition_seed(base: u64, i: usize) -> u64 {
    derive_seed(base, &format!("repetition.{i}"))
}
