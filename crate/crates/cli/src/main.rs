use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use foveadrive::attention::{train_attention, AttentionModule};
use foveadrive::harness::config::{
    frame_rate, generate_splits, read_json, relative_to, split_dir, stream_clips, write_json, AttentionRunConfig,
    DataConfig, RunConfig,
};
use foveadrive::harness::eval::{
    compare_segment_lengths, evaluate, subgroup_analysis, write_curve_csv, write_placements_jsonl, EvalReport,
};
use foveadrive::harness::flops::compute_flops;
use foveadrive::harness::train::train;
use foveadrive::planner::DrivingModel;
use foveadrive::world::read_dataset;

#[derive(Parser)]
#[command(name = "foveadrive", version, about = "Periphery-fovea speed prediction on a synthetic driving world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Subgroup,
    SegmentCurve,
    FoveaDiagnostics,
}

#[derive(Subcommand)]
enum Command {
    /// Render train / validation / test clips with speed and gaze labels.
    GenerateData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the gaze attention module on the training split.
    TrainAttention {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a driving model; writes model.json and train_log.json into `out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split and print the report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Segment length in seconds.
        #[arg(long, default_value_t = 30.0)]
        segment_len: f64,
        #[arg(long)]
        attention: Option<PathBuf>,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-frame fovea placements as JSON lines.
        #[arg(long)]
        placements: Option<PathBuf>,
    },
    /// Compare several checkpoints on the test split and write a CSV.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        analysis: Analysis,
        #[arg(long)]
        attention: Option<PathBuf>,
        /// Segment length in seconds for the subgroup and diagnostics analyses.
        #[arg(long, default_value_t = 30.0)]
        segment_len: f64,
        /// Segment lengths in seconds for the curve analysis.
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 10.0, 20.0, 30.0])]
        lengths: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer FLOPs of the model described by a training config.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load_attention(path: Option<&Path>) -> Result<Option<AttentionModule>> {
    path.map(|p| AttentionModule::load(p).with_context(|| format!("loading attention {}", p.display())))
        .transpose()
}

fn load_model(path: &Path) -> Result<DrivingModel> {
    DrivingModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn label_of(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(dir) if stem == "model" => dir.to_string_lossy().into_owned(),
        _ => stem,
    }
}

fn segment_frames(data: &Path, seconds: f64) -> Result<usize> {
    if !(seconds > 0.0) {
        bail!("segment length must be positive, got {seconds}");
    }
    Ok(((seconds * frame_rate(data)?).round() as usize).max(1))
}

fn evaluate_path(model: &DrivingModel, label: &str, att: Option<&AttentionModule>, test: &Path, frames: usize) -> Result<foveadrive::harness::eval::EvalOutput> {
    Ok(evaluate(model, label, att, stream_clips(test)?, frames)?)
}

fn clip_source(dir: &Path) -> Box<dyn Iterator<Item = foveadrive::Result<foveadrive::world::VideoClip>>> {
    match stream_clips(dir) {
        Ok(it) => Box::new(it),
        Err(e) => Box::new(std::iter::once(Err(e))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out, seed } => {
            let config: DataConfig = match config {
                Some(p) => read_json(&p)?,
                None => DataConfig::default(),
            };
            for (split, manifest) in generate_splits(&config, &out, seed)? {
                eprintln!("{split}: {} clips", manifest.clips.len());
            }
        }
        Command::TrainAttention { config, data, out } => {
            let rc: AttentionRunConfig = read_json(&config)?;
            let train_clips = read_dataset(&split_dir(&data, "train"))?;
            let val_dir = data.join("validation");
            let validation = if val_dir.join("manifest.json").exists() { read_dataset(&val_dir)? } else { Vec::new() };
            let mut module = AttentionModule::new(rc.build()?)?;
            let log = train_attention(&mut module, &train_clips, &validation, &rc.training)?;
            for e in &log {
                eprintln!("epoch {} train KL {:.4} validation KL {:?}", e.epoch, e.train_kl, e.validation_kl);
            }
            std::fs::create_dir_all(&out)?;
            module
                .checkpoint(serde_json::json!({ "training": rc.training, "log": log }))
                .save(&out.join("attention.json"))?;
        }
        Command::Train { config, data, out } => {
            let rc: RunConfig = read_json(&config)?;
            let model_config = rc.model.build()?;
            let attention = load_attention(rc.attention.as_ref().map(|p| relative_to(&config, p)).as_deref())?;
            let train_clips = read_dataset(&split_dir(&data, "train"))?;
            let val_dir = data.join("validation");
            let validation = if val_dir.join("manifest.json").exists() { read_dataset(&val_dir)? } else { Vec::new() };
            let (model, log) = train(model_config, attention.as_ref(), &train_clips, &validation, &rc.training)?;
            for e in &log.epochs {
                eprintln!("epoch {} train {:.4} validation {:?}", e.epoch, e.train_loss, e.validation_mae);
            }
            std::fs::create_dir_all(&out)?;
            model.checkpoint(serde_json::json!({ "run": rc })).save(&out.join("model.json"))?;
            write_json(&out.join("train_log.json"), &log)?;
        }
        Command::Evaluate { checkpoint, data, segment_len, attention, out, placements } => {
            let model = load_model(&checkpoint)?;
            let att = load_attention(attention.as_deref())?;
            let test = split_dir(&data, "test");
            let frames = segment_frames(&test, segment_len)?;
            let result = evaluate_path(&model, &label_of(&checkpoint), att.as_ref(), &test, frames)?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &result.report)?;
            writeln!(w)?;
            w.flush()?;
            if let Some(p) = placements {
                let mut w = output(Some(&p))?;
                write_placements_jsonl(&result.placements, &mut w)?;
                w.flush()?;
            }
        }
        Command::Compare { checkpoints, data, analysis, attention, segment_len, lengths, permutations, seed, out } => {
            let att = load_attention(attention.as_deref())?;
            let test = split_dir(&data, "test");
            let models = checkpoints
                .iter()
                .map(|p| Ok((label_of(p), load_model(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut w = output(out.as_deref())?;
            match analysis {
                Analysis::SegmentCurve => {
                    let refs: Vec<(&str, &DrivingModel)> = models.iter().map(|(l, m)| (l.as_str(), m)).collect();
                    let rate = frame_rate(&test)?;
                    let rows = compare_segment_lengths(&refs, att.as_ref(), || clip_source(&test), &lengths, rate)?;
                    write_curve_csv(&rows, &mut w)?;
                }
                Analysis::Subgroup => {
                    if models.len() != 2 {
                        bail!("subgroup analysis takes exactly two checkpoints (baseline, candidate)");
                    }
                    let frames = segment_frames(&test, segment_len)?;
                    let reports = models
                        .iter()
                        .map(|(l, m)| Ok(evaluate_path(m, l, att.as_ref(), &test, frames)?.report))
                        .collect::<Result<Vec<EvalReport>>>()?;
                    let a = subgroup_analysis(&reports[0], &reports[1], permutations, seed)?;
                    writeln!(w, "group,frames,gain_kmh,p_value")?;
                    let p = |t: &Option<foveadrive::harness::stats::PermutationTestResult>| {
                        t.as_ref().map_or(String::new(), |t| format!("{:.6}", t.p_value))
                    };
                    writeln!(w, "pedestrian,{},{:.6},{}", a.frames[0], a.gains[0], p(&a.pedestrian_test))?;
                    writeln!(w, "other,{},{:.6},{}", a.frames[1], a.gains[1], p(&a.other_test))?;
                    writeln!(w, "difference,{},{:.6},{}", a.frames[0] + a.frames[1], a.gains[0] - a.gains[1], p(&a.difference_test))?;
                }
                Analysis::FoveaDiagnostics => {
                    let frames = segment_frames(&test, segment_len)?;
                    writeln!(w, "model,policy,mae_kmh,mean_likelihood,mean_overlap")?;
                    for (l, m) in &models {
                        let r = evaluate_path(m, l, att.as_ref(), &test, frames)?.report;
                        let policy = m.config.fovea.as_ref().map_or("none".to_string(), |f| f.policy.label());
                        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
                        let (lik, ov) = r.fovea.as_ref().map_or((None, None), |f| (f.mean_likelihood, f.mean_overlap));
                        writeln!(w, "{l},{policy},{:.6},{},{}", r.metrics.mae, opt(lik), opt(ov))?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Flops { config } => {
            let rc: RunConfig = read_json(&config)?;
            let report = compute_flops(&rc.model.build()?)?;
            let mut w = output(None)?;
            serde_json::to_writer_pretty(&mut w, &serde_json::json!({ "total": report.total(), "layers": report.layers }))?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
