//! Evaluation reports, segment splitting, subgroup analysis and fovea
//! diagnostics.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionModule;
use crate::attention_map::AttentionMap;
use crate::error::{Error, Result};
use crate::fovea::{fovea_likelihood, fovea_overlap, select_cells, FoveaPlacement, FoveaSelectionConfig, PlacementRecord};
use crate::harness::flops::compute_flops;
use crate::harness::metrics::{metrics, Metrics};
use crate::harness::stats::{observed_gains, permutation_test, PermutationTestResult, Statistic, VideoDiffs, SUBGROUP_SPEED_LIMIT_KMH};
use crate::harness::train::sequence_seed;
use crate::planner::DrivingModel;
use crate::seed::{derive_seed_n, rng};
use crate::world::VideoClip;

/// A half-open frame range `[start, end)` of one clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub clip: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Greedy split into `max_frames`-long segments plus the remainder.
pub fn segment_clips(lengths: &[usize], max_frames: usize) -> Vec<Segment> {
    let max_frames = max_frames.max(1);
    let mut out = Vec::new();
    for (clip, &len) in lengths.iter().enumerate() {
        let mut start = 0;
        while start < len {
            let end = (start + max_frames).min(len);
            out.push(Segment { clip, start, end });
            start = end;
        }
    }
    out
}

/// Per-video prediction record over frames that have targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub clip: String,
    pub frames: Vec<usize>,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub pedestrian: Vec<bool>,
}

impl VideoRecord {
    /// Signed errors with negative predictions clipped to zero.
    pub fn errors(&self) -> Vec<f64> {
        self.predictions.iter().zip(&self.targets).map(|(p, y)| p.max(0.0) - y).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub frames: usize,
    pub mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupBreakdown {
    pub speed_limit_kmh: f64,
    pub filtered_frames: usize,
    pub pedestrian: GroupStats,
    pub other: GroupStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoveaDiagnostics {
    pub mean_likelihood: Option<f64>,
    pub mean_overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub segment_frames: usize,
    pub metrics: Metrics,
    pub videos: Vec<VideoRecord>,
    pub subgroups: SubgroupBreakdown,
    pub fovea: Option<FoveaDiagnostics>,
    pub flops_per_frame: u64,
}

fn group_of(record: &VideoRecord, i: usize) -> Option<usize> {
    (record.targets[i] <= SUBGROUP_SPEED_LIMIT_KMH).then_some(if record.pedestrian[i] { 0 } else { 1 })
}

pub fn subgroup_breakdown(videos: &[VideoRecord]) -> SubgroupBreakdown {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for v in videos {
        for (i, e) in v.errors().iter().enumerate() {
            if let Some(g) = group_of(v, i) {
                sums[g] += e.abs();
                counts[g] += 1;
            }
        }
    }
    let stats = |g: usize| GroupStats {
        frames: counts[g],
        mae: (counts[g] > 0).then(|| sums[g] / counts[g] as f64),
    };
    SubgroupBreakdown {
        speed_limit_kmh: SUBGROUP_SPEED_LIMIT_KMH,
        filtered_frames: counts[0] + counts[1],
        pedestrian: stats(0),
        other: stats(1),
    }
}

/// Likelihood (when maps are given) and adjacent-frame overlap, averaged
/// over frames and frame pairs of each sequence.
pub fn placement_diagnostics(sequences: &[(Vec<FoveaPlacement>, Option<Vec<AttentionMap>>)]) -> FoveaDiagnostics {
    let (mut lik, mut nl) = (0.0, 0usize);
    let (mut ov, mut no) = (0.0, 0usize);
    for (placements, maps) in sequences {
        if let Some(maps) = maps {
            for (p, m) in placements.iter().zip(maps) {
                lik += fovea_likelihood(m, &p.cells);
                nl += 1;
            }
        }
        for w in placements.windows(2) {
            if w[0].rects.is_empty() {
                continue;
            }
            ov += fovea_overlap(&w[0].rects, &w[1].rects);
            no += 1;
        }
    }
    FoveaDiagnostics {
        mean_likelihood: (nl > 0).then(|| lik / nl as f64),
        mean_overlap: (no > 0).then(|| ov / no as f64),
    }
}

/// Placements a selection policy makes on given attention maps, one
/// sequence per entry, each with its own seeded stream.
pub fn policy_placements(
    selection: &FoveaSelectionConfig,
    frame: (usize, usize),
    sequences: &[(String, Vec<AttentionMap>)],
) -> Result<Vec<(Vec<FoveaPlacement>, Option<Vec<AttentionMap>>)>> {
    sequences
        .iter()
        .map(|(id, maps)| {
            let mut r = rng(derive_seed_n(selection.seed, id, 0));
            let placements = maps
                .iter()
                .map(|m| {
                    let cells = select_cells(selection, Some(m), &mut r)?;
                    Ok(FoveaPlacement::from_cells(&cells, frame, selection.patch_px))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((placements, Some(maps.clone())))
        })
        .collect()
}

pub struct EvalOutput {
    pub report: EvalReport,
    pub placements: Vec<PlacementRecord>,
}

/// Evaluates a model on clips split into segments of at most
/// `segment_frames`. State resets per segment; targets come from the
/// parent clip, so every segment frame whose target exists is scored.
pub fn evaluate<I>(
    model: &DrivingModel,
    label: &str,
    attention: Option<&AttentionModule>,
    clips: I,
    segment_frames: usize,
) -> Result<EvalOutput>
where
    I: IntoIterator<Item = Result<VideoClip>>,
{
    let needs = model.config.fovea.as_ref().is_some_and(|f| f.policy.needs_attention());
    if needs && attention.is_none() {
        let l = model.config.fovea.as_ref().map(|f| f.policy.label()).unwrap_or_default();
        return Err(Error::MissingAttention(l));
    }
    let h = model.config.horizon;
    let mut videos = Vec::new();
    let mut placements_log = Vec::new();
    let mut sequences = Vec::new();
    for clip in clips {
        let clip = clip?;
        if clip.len() <= h {
            return Err(Error::ClipTooShort {
                clip: clip.id.clone(),
                frames: clip.len(),
                horizon: h,
            });
        }
        let mut rec = VideoRecord {
            clip: clip.id.clone(),
            frames: Vec::new(),
            predictions: Vec::new(),
            targets: Vec::new(),
            pedestrian: Vec::new(),
        };
        for seg in segment_clips(&[clip.len()], segment_frames) {
            let frames = &clip.frames[seg.start..seg.end];
            let maps = match (attention, model.config.fovea.is_some()) {
                (Some(a), true) => Some(a.predict_sequence(
                    &clip.id,
                    &frames
                        .iter()
                        .map(|f| a.backbone_forward(&crate::encoders::preprocess_peripheral(f, &a.config.preproc)?))
                        .collect::<Result<Vec<_>>>()?,
                )?),
                _ => None,
            };
            let mut r = rng(sequence_seed(model, &clip.id, seg.start));
            let (preds, placements) = model.predict_frames(&clip.id, frames, maps.as_deref(), &mut r)?;
            for (k, p) in preds.iter().enumerate() {
                let t = seg.start + k;
                if let Some(&y) = clip.speed.get(t + h) {
                    rec.frames.push(t);
                    rec.predictions.push(*p);
                    rec.targets.push(y);
                    rec.pedestrian.push(clip.is_pedestrian_frame(t));
                }
            }
            if model.config.fovea.is_some() {
                for (k, p) in placements.iter().enumerate() {
                    placements_log.push(PlacementRecord {
                        clip: clip.id.clone(),
                        frame: seg.start + k,
                        cells: p.cells.clone(),
                        rects: p.rects.clone(),
                        likelihood: maps.as_ref().map(|m| fovea_likelihood(&m[k], &p.cells)),
                    });
                }
                sequences.push((placements, maps));
            }
        }
        videos.push(rec);
    }
    let preds: Vec<f64> = videos.iter().flat_map(|v| v.predictions.iter().map(|p| p.max(0.0))).collect();
    let ys: Vec<f64> = videos.iter().flat_map(|v| v.targets.iter().copied()).collect();
    let m = metrics(&preds, &ys)?;
    let report = EvalReport {
        model: label.to_string(),
        segment_frames,
        metrics: m,
        subgroups: subgroup_breakdown(&videos),
        videos,
        fovea: model.config.fovea.as_ref().map(|_| placement_diagnostics(&sequences)),
        flops_per_frame: compute_flops(&model.config)?.total(),
    };
    Ok(EvalOutput {
        report,
        placements: placements_log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAnalysis {
    /// `MAE(A) - MAE(B)` on pedestrian and other frames.
    pub gains: [f64; 2],
    pub frames: [usize; 2],
    pub pedestrian_test: Option<PermutationTestResult>,
    pub other_test: Option<PermutationTestResult>,
    pub difference_test: Option<PermutationTestResult>,
}

/// Per-video difference sums for two reports scored on identical frames.
pub fn paired_differences(a: &EvalReport, b: &EvalReport) -> Result<Vec<VideoDiffs>> {
    if a.videos.len() != b.videos.len() {
        return Err(Error::shape("paired reports videos", a.videos.len(), b.videos.len()));
    }
    a.videos
        .iter()
        .zip(&b.videos)
        .map(|(va, vb)| {
            if va.clip != vb.clip || va.frames != vb.frames {
                return Err(Error::shape("paired report frames", &va.clip, &vb.clip));
            }
            let (ea, eb) = (va.errors(), vb.errors());
            let mut d = VideoDiffs::default();
            for i in 0..ea.len() {
                if let Some(g) = group_of(va, i) {
                    d.sums[g] += ea[i].abs() - eb[i].abs();
                    d.counts[g] += 1;
                }
            }
            Ok(d)
        })
        .collect()
}

pub fn subgroup_analysis(a: &EvalReport, b: &EvalReport, permutations: usize, seed: u64) -> Result<SubgroupAnalysis> {
    let diffs = paired_differences(a, b)?;
    let frames = [
        diffs.iter().map(|d| d.counts[0]).sum(),
        diffs.iter().map(|d| d.counts[1]).sum(),
    ];
    let test = |which, ok: bool| ok.then(|| permutation_test(&diffs, which, permutations, seed));
    Ok(SubgroupAnalysis {
        gains: observed_gains(&diffs),
        frames,
        pedestrian_test: test(Statistic::Group0, frames[0] > 0),
        other_test: test(Statistic::Group1, frames[1] > 0),
        difference_test: test(Statistic::Difference, frames[0] > 0 && frames[1] > 0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub length_s: f64,
    pub frames: usize,
    pub mae: f64,
}

/// MAE per (model, segment length). `clips` is re-read for every pass.
pub fn compare_segment_lengths<F, I>(
    models: &[(&str, &DrivingModel)],
    attention: Option<&AttentionModule>,
    clips: F,
    lengths_s: &[f64],
    frame_rate: f64,
) -> Result<Vec<CurveRow>>
where
    F: Fn() -> I,
    I: IntoIterator<Item = Result<VideoClip>>,
{
    let mut rows = Vec::new();
    for (label, model) in models {
        for &len in lengths_s {
            let frames = (len * frame_rate).round() as usize;
            let out = evaluate(model, label, attention, clips(), frames)?;
            rows.push(CurveRow {
                model: label.to_string(),
                length_s: len,
                frames: out.report.metrics.frames,
                mae: out.report.metrics.mae,
            });
        }
    }
    Ok(rows)
}

pub fn write_curve_csv(rows: &[CurveRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "model,length_s,frames,mae_kmh")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.6}", r.model, r.length_s, r.frames, r.mae)?;
    }
    Ok(())
}

pub fn write_placements_jsonl(records: &[PlacementRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Distinct clip ids of a report, in order.
pub fn report_clips(report: &EvalReport) -> BTreeSet<String> {
    report.videos.iter().map(|v| v.clip.clone()).collect()
}
