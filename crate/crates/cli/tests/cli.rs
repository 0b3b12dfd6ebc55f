use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raytrack::geometry::DepthFrame;
use raytrack::io::{read_depth_png, read_pose_csv, write_depth_png, CameraSpec, SequenceManifest};

fn raytrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raytrack"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "status {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

/// Temp directory holding a built model and a rendered 60-frame orbit.
fn rendered(frames: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&raytrack(dir.path(), &["build-model", "--out", "model.mlfm"]));
    fs::write(
        dir.path().join("scene.toml"),
        format!("seed = 3\n[[segments]]\n[segments.orbit]\nframes = {frames}\n"),
    )
    .unwrap();
    ok(&raytrack(dir.path(), &["--model", "model.mlfm", "render", "scene.toml", "--out", "seq"]));
    dir
}

fn track(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--model", "model.mlfm", "track", "seq/sequence.toml", "--poses", "poses.csv", "--store", "s.idst"];
    args.extend_from_slice(extra);
    raytrack(dir, &args)
}

fn blank() -> DepthFrame {
    DepthFrame::from_vec(640, 480, vec![0.0; 640 * 480]).unwrap()
}

/// Writes `count` frames with no depth anywhere plus their manifest.
fn blank_frames(dir: &Path, name: &str, count: usize) -> PathBuf {
    let seq = dir.join(name);
    fs::create_dir_all(seq.join("frames")).unwrap();
    let mut manifest = SequenceManifest::new("frames/{}.png", count, CameraSpec::default());
    manifest.base_dir = seq.clone();
    for i in 0..count {
        write_depth_png(&manifest.frame_path(i), &blank(), 1.0).unwrap();
    }
    manifest.write(&seq.join("sequence.toml")).unwrap();
    seq.join("sequence.toml")
}

#[test]
fn render_track_eval_roundtrip() {
    let dir = rendered(60);
    let d = dir.path();
    let summary = ok(&track(d, &[]));
    assert_eq!(summary["frames"], 60);
    assert_eq!(summary["failed_frames"], 0);
    assert!(summary["metrics"]["yaw_deg"].as_f64().unwrap() < 2.0);
    assert!(summary["metrics"]["translation_mm"].as_f64().unwrap() < 5.0);
    assert_eq!(read_pose_csv(&d.join("poses.csv")).unwrap().len(), 60);

    let metrics = ok(&raytrack(d, &["eval", "poses.csv", "seq/truth.csv", "--per-frame", "errors.csv"]));
    assert_eq!(metrics, summary["metrics"]);
    let errors = fs::read_to_string(d.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 61);
    assert!(errors.starts_with("frame,yaw_deg,pitch_deg,roll_deg,translation_mm"));

    let self_metrics = ok(&raytrack(d, &["eval", "seq/truth.csv", "seq/truth.csv"]));
    for key in ["yaw_deg", "pitch_deg", "roll_deg", "translation_mm"] {
        assert_eq!(self_metrics[key], 0.0);
    }
}

#[test]
fn rendered_frames_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&raytrack(d, &["build-model", "--out", "model.mlfm"]));
    fs::write(d.join("scene.toml"), "seed = 5\ndepth_scale = 0.1\n[[segments]]\n[segments.orbit]\nframes = 3\n").unwrap();
    ok(&raytrack(d, &["--model", "model.mlfm", "render", "scene.toml", "--out", "a"]));
    ok(&raytrack(d, &["--model", "model.mlfm", "render", "scene.toml", "--out", "b"]));
    let manifest = SequenceManifest::read(&d.join("a/sequence.toml")).unwrap();
    assert_eq!(manifest.depth_scale, 0.1);
    for i in 0..3 {
        let a = read_depth_png(&manifest.frame_path(i), manifest.depth_scale).unwrap();
        let b = read_depth_png(&d.join(format!("b/frames/{i:05}.png")), 0.1).unwrap();
        assert_eq!(a.depth, b.depth);
        assert!(a.valid_count() > 1000);
    }
}

#[test]
fn tracking_is_byte_identical_across_runs() {
    let dir = rendered(12);
    let d = dir.path();
    ok(&track(d, &["--seed", "4"]));
    let first = (fs::read(d.join("poses.csv")).unwrap(), fs::read(d.join("s.idst")).unwrap());
    ok(&track(d, &["--seed", "4"]));
    let second = (fs::read(d.join("poses.csv")).unwrap(), fs::read(d.join("s.idst")).unwrap());
    assert_eq!(first, second);
}

#[test]
fn ablation_switches_are_honored() {
    let dir = rendered(12);
    let d = dir.path();
    let summary = ok(&track(d, &["--no-adapt", "--no-pso", "--no-temporal"]));
    assert_eq!(summary["stored_identities"], 0);
    assert_eq!(summary["present_identity"], 0);
    assert_eq!(summary["frames"], 12);
}

#[test]
fn store_list_export_and_merge() {
    let dir = rendered(30);
    let d = dir.path();
    ok(&track(d, &[]));
    let listing = ok(&raytrack(d, &["store", "list", "s.idst"]));
    assert_eq!(listing["dimension"], 28);
    assert_eq!(listing["models"].as_array().unwrap().len(), 2);
    assert_eq!(listing["models"][1]["present"], true);

    let merged = ok(&raytrack(d, &["store", "merge", "s.idst", "s.idst", "--out", "m.idst"]));
    assert_eq!(merged["stored_identities"], 2);

    ok(&raytrack(d, &["store", "export", "m.idst", "--out", "m.json"]));
    let exported: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(exported["models"].as_array().unwrap().len(), 2);
    assert_eq!(exported["present_index"], 1);
}

#[test]
fn model_truncate_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let built = ok(&raytrack(d, &["build-model", "--out", "full.mlfm", "--n-id", "20", "--n-exp", "6"]));
    assert_eq!((built["n_id"].as_u64(), built["n_exp"].as_u64()), (Some(20), Some(6)));
    ok(&raytrack(d, &["truncate-model", "full.mlfm", "--out", "small.mlfm", "--n-id", "5", "--n-exp", "2"]));
    let small = ok(&raytrack(d, &["inspect-model", "small.mlfm"]));
    assert_eq!((small["n_id"].as_u64(), small["n_exp"].as_u64()), (Some(5), Some(2)));
    assert_eq!(small["vertices"], built["vertices"]);
    let out = raytrack(d, &["truncate-model", "small.mlfm", "--out", "x.mlfm", "--n-id", "9", "--n-exp", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = rendered(6);
    let d = dir.path();

    let empty = blank_frames(d, "blank", 3);
    let out = raytrack(d, &["--model", "model.mlfm", "track", empty.to_str().unwrap(), "--poses", "p.csv", "--store", "p.idst"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("p.csv").exists());

    // the head leaves the view after six frames
    let manifest = SequenceManifest::read(&d.join("seq/sequence.toml")).unwrap();
    for i in 6..9 {
        write_depth_png(&manifest.frame_path(i), &blank(), 1.0).unwrap();
    }
    let mut longer = manifest.clone();
    longer.frame_count = 9;
    longer.ground_truth = None;
    longer.write(&d.join("seq/longer.toml")).unwrap();
    let out = raytrack(d, &["--model", "model.mlfm", "track", "seq/longer.toml", "--poses", "p.csv", "--store", "p.idst"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_pose_csv(&d.join("p.csv")).unwrap();
    assert_eq!(records.len(), 9);
    assert!(records[..6].iter().all(|r| !r.failed));
    assert!(records[6..].iter().all(|r| r.failed));

    let out = raytrack(d, &["inspect-model", "missing.mlfm"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.mlfm"));

    assert_eq!(raytrack(d, &["track"]).status.code(), Some(2));
    assert_eq!(raytrack(d, &["no-such-command"]).status.code(), Some(2));

    fs::write(d.join("bad.toml"), "[identity]\nstride = 0\n").unwrap();
    let out = raytrack(d, &["--config", "bad.toml", "--model", "model.mlfm", "track", "seq/sequence.toml", "--poses", "q.csv", "--store", "q.idst"]);
    assert_eq!(out.status.code(), Some(1));
}
