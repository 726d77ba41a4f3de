//! End-to-end exercises of the `vrd` binary: the synth -> featurize ->
//! train -> predict -> evaluate workflow, determinism, the --no-cflm
//! switch, and machine-readable error reporting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vrd::formats::{DetectionFile, GroundTruthFile, PipelineConfig, PredictionFile};
use vrd::synth::{ObjectSpec, OcclusionWindow, SynthConfig, VelocityPhase};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vrd"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn vrd");
    assert!(
        out.status.success(),
        "vrd {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

fn write_scene(dir: &Path, name: &str, scene: &SynthConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(scene).unwrap()).unwrap();
    path
}

fn approach_scene(seed: u64, gap: Option<usize>) -> SynthConfig {
    SynthConfig {
        seed,
        frame_count: 64,
        objects: vec![
            ObjectSpec {
                category: "dog".into(),
                start: [10.0, 100.0, 30.0, 30.0],
                velocity: vec![VelocityPhase {
                    frames: 64,
                    vx: 2.0,
                    vy: 0.0,
                }],
            },
            ObjectSpec {
                category: "person".into(),
                start: [260.0, 100.0, 30.0, 40.0],
                velocity: vec![],
            },
        ],
        occlusions: gap
            .map(|g| {
                vec![OcclusionWindow {
                    object: 0,
                    begin: 30,
                    end: 30 + g,
                }]
            })
            .unwrap_or_default(),
        ..Default::default()
    }
}

#[test]
fn full_workflow_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();

    // a config with a short training schedule
    let mut cfg = PipelineConfig::default();
    cfg.train.epochs = 8;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    // synthesize three scenes; train on two, predict on the third
    let mut gt_paths = Vec::new();
    for seed in 0..3u64 {
        let scene = write_scene(dir, &format!("scene{seed}.json"), &approach_scene(seed, None));
        let det = dir.join(format!("det{seed}.json"));
        let gt = dir.join(format!("gt{seed}.json"));
        run_ok(&[
            "synth",
            "--scene",
            &p(&scene),
            "--out-detections",
            &p(&det),
            "--out-gt",
            &p(&gt),
        ]);
        DetectionFile::load(&det).unwrap();
        GroundTruthFile::load(&gt).unwrap();
        gt_paths.push(gt);
    }

    let samples = dir.join("samples.json");
    run_ok(&[
        "featurize",
        "--gt",
        &p(&gt_paths[0]),
        "--gt",
        &p(&gt_paths[1]),
        "--out",
        &p(&samples),
    ]);

    let ckpt = dir.join("model.json");
    run_ok(&[
        "train",
        "--config",
        &p(&cfg_path),
        "--samples",
        &p(&samples),
        "--out",
        &p(&ckpt),
    ]);

    let det2 = dir.join("det2.json");
    let preds = dir.join("preds.json");
    run_ok(&[
        "predict",
        "--detections",
        &p(&det2),
        "--checkpoint",
        &p(&ckpt),
        "--out",
        &p(&preds),
    ]);
    let pf = PredictionFile::load(&preds).unwrap();
    assert!(!pf.relations.is_empty());

    let report_path = dir.join("report.json");
    let out = run_ok(&[
        "evaluate",
        "--predictions",
        &p(&preds),
        "--gt",
        &p(&gt_paths[2]),
        "--out",
        &p(&report_path),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mAP"), "evaluate output: {stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["metrics"]["mAP"].is_number());

    // pipeline over two videos with a worker pool matches single predict
    let out_dir = dir.join("batch");
    run_ok(&[
        "pipeline",
        "--detections",
        &p(&det2),
        "--detections",
        &p(&dir.join("det1.json")),
        "--checkpoint",
        &p(&ckpt),
        "--gt",
        &p(&gt_paths[2]),
        "--gt",
        &p(&gt_paths[1]),
        "--out-dir",
        &p(&out_dir),
        "--workers",
        "2",
    ]);
    let batch_pred = std::fs::read_to_string(out_dir.join("synth-2.predictions.json")).unwrap();
    let single_pred = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(batch_pred, single_pred);
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn predict_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let scene = write_scene(dir, "scene.json", &approach_scene(9, None));
    let det = dir.join("det.json");
    let gt = dir.join("gt.json");
    run_ok(&["synth", "--scene", &p(&scene), "--out-detections", &p(&det), "--out-gt", &p(&gt)]);

    let samples = dir.join("samples.json");
    run_ok(&["featurize", "--gt", &p(&gt), "--out", &p(&samples)]);
    let mut cfg = PipelineConfig::default();
    cfg.train.epochs = 2;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let ckpt = dir.join("model.json");
    run_ok(&["train", "--config", &p(&cfg_path), "--samples", &p(&samples), "--out", &p(&ckpt)]);

    let (a, b) = (dir.join("a.json"), dir.join("b.json"));
    for out in [&a, &b] {
        run_ok(&["predict", "--detections", &p(&det), "--checkpoint", &p(&ckpt), "--out", &p(out)]);
    }
    assert_eq!(
        std::fs::read_to_string(&a).unwrap(),
        std::fs::read_to_string(&b).unwrap()
    );
}

#[test]
fn no_cflm_flag_splits_occluded_track() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let scene = write_scene(dir, "scene.json", &approach_scene(1, Some(4)));
    let det = dir.join("det.json");
    let gt = dir.join("gt.json");
    run_ok(&["synth", "--scene", &p(&scene), "--out-detections", &p(&det), "--out-gt", &p(&gt)]);

    let tracks_for = |args: &[&str]| -> usize {
        let out_path = dir.join("tracks.json");
        let mut full = vec!["track", "--detections"];
        full.push(det.to_str().unwrap());
        full.push("--out");
        full.push(out_path.to_str().unwrap());
        full.extend_from_slice(args);
        run_ok(&full);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
        v["tracks"].as_array().unwrap().len()
    };
    assert_eq!(tracks_for(&[]), 2, "CFLM bridges the occlusion");
    assert_eq!(tracks_for(&["--no-cflm"]), 3, "without CFLM the track splits");
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let out = bin()
        .args(["track", "--detections", &p(&bad), "--out", &p(&dir.join("out.json"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["code"], 2);
    assert!(record["error"].is_string());

    // config problems exit with 3
    let out = bin()
        .args([
            "track",
            "--config",
            &p(&bad),
            "--detections",
            &p(&bad),
            "--out",
            &p(&dir.join("out.json")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
