use std::fs;

use foveadrive::encoders::{crop_and_resize_patch, preprocess_peripheral, PreprocConfig};
use foveadrive::fovea::PixelRect;
use foveadrive::world::render::glyph_rect;
use foveadrive::world::scene::{agent_visible, lead_vehicle, pedestrian_in_zone, AgentKind};
use foveadrive::world::{generate_clip, generate_clip_with_trace, read_dataset, write_dataset, Camera, WorldConfig};
use foveadrive::{Error, GRID_CELLS};

fn short(seconds: f64) -> WorldConfig {
    WorldConfig {
        clip_seconds: seconds,
        ..WorldConfig::toy(4)
    }
}

#[test]
fn same_seed_same_clip() {
    let a = generate_clip(&short(3.0), 9).unwrap();
    let b = generate_clip(&short(3.0), 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.frames, generate_clip(&short(3.0), 10).unwrap().frames);
}

#[test]
fn clip_invariants() {
    let c = generate_clip(&short(10.0), 4).unwrap();
    assert_eq!(c.len(), 100);
    assert_eq!(c.speed.len(), c.len());
    assert_eq!(c.gaze.len(), c.len());
    assert_eq!(c.tags.len(), c.len());
    assert!(c.speed.iter().all(|s| *s >= 0.0));
    for (t, g) in c.gaze.iter().enumerate() {
        assert_eq!(g.probs.len(), GRID_CELLS);
        assert!(g.probs.iter().all(|p| *p >= 0.0));
        assert!((g.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6, "frame {t}");
    }
    assert!(c.frames.iter().all(|f| (f.height, f.width) == (180, 320)));
}

#[test]
fn empty_world_cruises_with_road_prior() {
    let cfg = WorldConfig {
        vehicles: 0,
        pedestrians: 0,
        decoys: 0,
        ..short(5.0)
    };
    let c = generate_clip(&cfg, 2).unwrap();
    assert!(c.speed.windows(2).all(|w| w[0] == w[1]));
    let first = c.gaze[0].argmax();
    assert!(c.gaze.iter().all(|g| g.argmax() == first));
}

/// Re-derives the speed trace from the logged agent states with an
/// independent implementation of the control law.
#[test]
fn speed_matches_control_law_replay() {
    for seed in [1, 2, 3] {
        let (clip, trace) = generate_clip_with_trace(&short(40.0), seed).unwrap();
        let g = &trace.gains;
        let camera = Camera::default();
        let dt = 1.0 / trace.frame_rate;
        let mut v = trace.cruise_kmh;
        for (t, state) in trace.states.iter().enumerate() {
            assert!((clip.speed[t] - v).abs() < 1e-9, "seed {seed} frame {t}: {} vs {v}", clip.speed[t]);
            let cue_earlier = |id: u32| {
                t >= trace.lead_frames
                    && trace.states[t - trace.lead_frames].agents.iter().any(|a| a.id == id && a.cue_on)
            };
            let mut limits = vec![trace.cruise_kmh];
            for a in &state.agents {
                if lead_vehicle(a) {
                    limits.push(g.follow_kmh_per_m * (a.distance_m - g.min_headway_m).max(0.0));
                    if cue_earlier(a.id) {
                        limits.push(trace.cruise_kmh - g.brake_drop_kmh);
                    }
                } else if pedestrian_in_zone(&camera, a) {
                    limits.push(trace.cruise_kmh - g.pedestrian_caution_kmh);
                    if cue_earlier(a.id) {
                        limits.push(g.pedestrian_crawl_kmh);
                    }
                }
            }
            let target = limits.into_iter().fold(f64::INFINITY, f64::min).max(0.0);
            v = (v + dt * g.response_per_s * (target - v)).max(0.0);
        }
    }
}

#[test]
fn pedestrian_tags_have_visible_pedestrians() {
    let camera = Camera::default();
    let mut tagged = 0;
    for seed in 0..4 {
        let (clip, trace) = generate_clip_with_trace(&short(40.0), seed).unwrap();
        for (t, s) in trace.states.iter().enumerate() {
            if clip.is_pedestrian_frame(t) {
                tagged += 1;
                assert!(s.agents.iter().any(|a| a.kind == AgentKind::Pedestrian && agent_visible(&camera, a)));
            }
        }
    }
    assert!(tagged > 0, "no pedestrian frames in four clips");
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let clips = vec![generate_clip(&short(2.0), 1).unwrap(), generate_clip(&short(1.5), 2).unwrap()];
    write_dataset(&clips, dir.path()).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), clips);
}

#[test]
fn dataset_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::MissingManifest(_))));

    let clip = generate_clip(&short(1.0), 3).unwrap();
    let manifest = write_dataset(std::slice::from_ref(&clip), dir.path()).unwrap();
    let frames = dir.path().join(&manifest.clips[0].frames_file);
    let bytes = fs::read(&frames).unwrap();
    let frame_bytes = 180 * 320 * 3;
    fs::write(&frames, &bytes[..bytes.len() - frame_bytes / 2]).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::CorruptFrame { clip: c, frame }) => {
            assert_eq!(c, clip.id);
            assert_eq!(frame, clip.len() - 1);
        }
        other => panic!("expected corrupt frame, got {other:?}"),
    }

    fs::write(&frames, &bytes).unwrap();
    let mpath = dir.path().join("manifest.json");
    let text = fs::read_to_string(&mpath).unwrap();
    fs::write(&mpath, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::VersionMismatch { found: 99, .. })));

    fs::write(&mpath, "{ not json").unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::CorruptIndex(_))));

    fs::write(&mpath, text).unwrap();
    fs::remove_file(dir.path().join(&manifest.clips[0].rows_file)).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::MissingFile(_))));
}

/// Logistic regression by full-batch gradient descent on standardized features.
fn probe_accuracy(train: &[(Vec<f64>, bool)], test: &[(Vec<f64>, bool)]) -> f64 {
    let d = train[0].0.len();
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|s| s.0[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (train.iter().map(|s| (s.0[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9))
        .collect();
    let z = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect() };
    let xs: Vec<(Vec<f64>, f64)> = train.iter().map(|(x, y)| (z(x), if *y { 1.0 } else { 0.0 })).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..400 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in &xs {
            let s = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let e = 1.0 / (1.0 + (-s).exp()) - y;
            gb += e;
            for j in 0..d {
                gw[j] += e * x[j];
            }
        }
        for j in 0..d {
            w[j] -= 0.5 * (gw[j] / n + 1e-3 * w[j]);
        }
        b -= 0.5 * gb / n;
    }
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let s = b + z(x).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            (s > 0.0) == *y
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Cue state is readable from a full-resolution patch at the cue but not
/// from the downsampled periphery.
#[test]
fn cue_needs_the_fovea() {
    let cfg = short(40.0);
    let pre = PreprocConfig::for_scale(4);
    let camera = Camera::default();
    let (fh, fw) = cfg.frame_size();
    let (ph, pw) = pre.peripheral;
    let mut periph = Vec::new();
    let mut patch = Vec::new();
    for seed in 0..6 {
        let (clip, trace) = generate_clip_with_trace(&cfg, 100 + seed).unwrap();
        for (t, s) in trace.states.iter().enumerate().step_by(3) {
            let frame = &clip.frames[t];
            let p = preprocess_peripheral(frame, &pre).unwrap();
            for a in &s.agents {
                let (top, left, side) = glyph_rect(&cfg, &camera, a);
                let half = pre.patch_crop as isize / 2;
                let (cy, cx) = (top + side as isize / 2, left + side as isize / 2);
                if cy - half < 0 || cx - half < 0 || cy + half > fh as isize || cx + half > fw as isize {
                    continue;
                }
                // Skip glyphs drawn over by a nearer agent.
                let occluded = s.agents.iter().any(|b| {
                    b.id != a.id && b.distance_m < a.distance_m && {
                        let (bt, bl, bs) = glyph_rect(&cfg, &camera, b);
                        (bt - top).abs() < (bs + side) as isize && (bl - left).abs() < (bs + side) as isize
                    }
                });
                if occluded {
                    continue;
                }
                let rect = PixelRect {
                    top: (cy - half) as usize,
                    left: (cx - half) as usize,
                    bottom: (cy + half) as usize,
                    right: (cx + half) as usize,
                };
                let crop = crop_and_resize_patch(frame, rect, &pre).unwrap();
                let c = crop.height / 2;
                let mut fx = Vec::new();
                for y in c - 5..c + 5 {
                    for x in c - 5..c + 5 {
                        fx.push((0..3).map(|k| crop.get(y, x, k)).sum::<f64>());
                    }
                }
                patch.push((fx, a.cue_on));
                let py = ((cy as f64 + 0.5) * ph as f64 / fh as f64) as isize;
                let px = ((cx as f64 + 0.5) * pw as f64 / fw as f64) as isize;
                let mut fp = Vec::new();
                for y in py - 1..=py + 1 {
                    for x in px - 1..=px + 1 {
                        let (y, x) = (y.clamp(0, ph as isize - 1) as usize, x.clamp(0, pw as isize - 1) as usize);
                        fp.extend((0..3).map(|k| p.get(y, x, k)));
                    }
                }
                periph.push((fp, a.cue_on));
            }
        }
    }
    // Balance the classes so chance accuracy is one half.
    let (on, off): (Vec<usize>, Vec<usize>) = (0..patch.len()).partition(|&i| patch[i].1);
    let n = on.len().min(off.len());
    assert!(n > 50, "too few samples per cue state: {} on, {} off", on.len(), off.len());
    let order: Vec<usize> = (0..n).flat_map(|i| [on[i], off[i]]).collect();
    let periph: Vec<_> = order.iter().map(|&i| periph[i].clone()).collect();
    let patch: Vec<_> = order.iter().map(|&i| patch[i].clone()).collect();
    let split = periph.len() * 2 / 3;
    let acc_periph = probe_accuracy(&periph[..split], &periph[split..]);
    let acc_patch = probe_accuracy(&patch[..split], &patch[split..]);
    assert!(acc_periph < 0.6, "periphery probe accuracy {acc_periph}");
    assert!(acc_patch > 0.95, "patch probe accuracy {acc_patch}");
}
