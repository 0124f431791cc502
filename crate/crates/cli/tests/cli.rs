use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use foveadrive::harness::config::DataConfig;
use foveadrive::world::WorldConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foveadrive")).args(args).output().expect("spawn cli")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let data_cfg = DataConfig {
        world: WorldConfig {
            clip_seconds: 3.0,
            ..WorldConfig::toy(4)
        },
        train: 2,
        validation: 1,
        test: 2,
    };
    fs::write(root.join("data.json"), serde_json::to_string(&data_cfg).unwrap()).unwrap();
    ok(&["generate-data", "--config", s(&root.join("data.json")), "--out", s(&data), "--seed", "4"]);
    for split in ["train", "validation", "test"] {
        assert!(data.join(split).join("manifest.json").exists(), "{split}");
    }

    fs::write(root.join("att.json"), r#"{"scale": 4, "training": {"epochs": 1, "window_frames": 10}}"#).unwrap();
    ok(&["train-attention", "--config", s(&root.join("att.json")), "--data", s(&data), "--out", s(&root.join("att"))]);
    assert!(root.join("att/attention.json").exists());

    let training = r#""training": {"epochs": 1, "steps_per_epoch": 2, "window_frames": 10, "windows_per_step": 2}"#;
    fs::write(
        root.join("topk.json"),
        format!(r#"{{"model": {{"scale": 4, "policy": {{"kind": "top-k"}}, "seed": 1}}, {training}, "attention": "att/attention.json"}}"#),
    )
    .unwrap();
    fs::write(
        root.join("none.json"),
        format!(r#"{{"model": {{"scale": 4, "policy": {{"kind": "none"}}, "seed": 1}}, {training}}}"#),
    )
    .unwrap();
    ok(&["train", "--config", s(&root.join("topk.json")), "--data", s(&data), "--out", s(&root.join("topk"))]);
    ok(&["train", "--config", s(&root.join("none.json")), "--data", s(&data), "--out", s(&root.join("none"))]);
    assert!(root.join("topk/train_log.json").exists());

    let topk = root.join("topk/model.json");
    let none = root.join("none/model.json");
    let att = root.join("att/attention.json");
    let placements = root.join("placements.jsonl");
    let report = ok(&[
        "evaluate", "--checkpoint", s(&topk), "--data", s(&data), "--segment-len", "2",
        "--attention", s(&att), "--placements", s(&placements),
    ]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["model"], "topk");
    assert_eq!(report["segment_frames"], 20);
    assert!(report["metrics"]["mae"].as_f64().unwrap() >= 0.0);
    let lines = fs::read_to_string(&placements).unwrap();
    assert_eq!(lines.lines().count(), 2 * 30);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["cells"].as_array().unwrap().len(), 2);

    let curve = ok(&[
        "compare", "--checkpoints", s(&topk), s(&none), "--data", s(&data), "--attention", s(&att),
        "--analysis", "segment-curve", "--lengths", "1,2,3",
    ]);
    let mut rows = curve.lines();
    assert_eq!(rows.next().unwrap(), "model,length_s,frames,mae_kmh");
    assert_eq!(rows.count(), 6);

    let out = root.join("subgroup.csv");
    ok(&[
        "compare", "--checkpoints", s(&none), s(&topk), "--data", s(&data), "--attention", s(&att),
        "--analysis", "subgroup", "--permutations", "50", "--out", s(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "group,frames,gain_kmh,p_value");
    assert_eq!(csv.lines().count(), 4);

    let diag = ok(&[
        "compare", "--checkpoints", s(&topk), s(&none), "--data", s(&data), "--attention", s(&att),
        "--analysis", "fovea-diagnostics",
    ]);
    assert!(diag.lines().nth(1).unwrap().starts_with("topk,top-k,"));
    assert!(diag.lines().nth(2).unwrap().starts_with("none,none,"));

    let flops: serde_json::Value = serde_json::from_str(&ok(&["flops", "--config", s(&root.join("topk.json"))])).unwrap();
    assert!(flops["total"].as_u64().unwrap() > 0);

    // Errors exit nonzero with a message.
    assert!(fails(&["evaluate", "--checkpoint", s(&root.join("missing.json")), "--data", s(&data)]).contains("error"));
    fails(&["evaluate", "--checkpoint", s(&topk), "--data", s(&data)]);
    fails(&["evaluate", "--checkpoint", s(&none), "--data", s(&data), "--segment-len", "0"]);
    fails(&["compare", "--checkpoints", s(&none), "--data", s(&data), "--analysis", "subgroup"]);
    fails(&["train", "--config", s(&root.join("data.json")), "--data", s(&data), "--out", s(&root.join("x"))]);
}

#[test]
fn unknown_arguments_are_rejected() {
    fails(&["evaluate", "--bogus"]);
    fails(&["no-such-command"]);
}
