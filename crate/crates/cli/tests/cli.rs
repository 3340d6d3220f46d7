//! End-to-end tests of the `rockwatch` binary: exit codes, JSON output
//! shapes, and the file artifacts each subcommand leaves behind.

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::{Command, Output};

use rockwatch_core::annotations::{AnnotationRecord, AnnotationSet, BoxRecord};
use rockwatch_core::detector::{scene_generate, SceneObject, SyntheticScene};

fn rockwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rockwatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_rig(dir: &Path) -> String {
    let path = dir.join("rig.toml");
    fs::write(
        &path,
        r#"
rate_hz = 1000.0

[camera]
width = 640
height = 480
fov_h_deg = 66.0
mount_height_m = 2.0

[laser]
x_m = 0.0
"#,
    )
    .unwrap();
    path.display().to_string()
}

fn scene_png(path: &Path, objects: Vec<SceneObject>) -> Vec<BoxRecord> {
    let scene = SyntheticScene {
        width: 640,
        height: 480,
        objects,
        background_texture_seed: 5,
    };
    let (img, truth) = scene_generate(&scene, 3);
    img.save(path).expect("png written");
    truth
        .iter()
        .map(|d| BoxRecord {
            x: d.x,
            y: d.y,
            w: d.w,
            h: d.h,
            class_id: d.class_id,
            score: None,
        })
        .collect()
}

fn rock() -> SceneObject {
    SceneObject {
        center: (400.0, 300.0),
        radii: (14.0, 11.0),
        contrast: 0.8,
        class_id: 0,
    }
}

#[test]
fn help_and_version_exit_zero() {
    let help = rockwatch(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("Usage: rockwatch"));
    let version = rockwatch(&["--version"]);
    assert_eq!(version.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&version.stdout).contains("rockwatch"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(rockwatch(&[]).status.code(), Some(2));
    assert_eq!(rockwatch(&["solve"]).status.code(), Some(2)); // missing args
    let dir = tempfile::tempdir().unwrap();
    let rig = write_rig(dir.path());
    let bad_pixel = rockwatch(&["solve", "--config", &rig, "--target-px", "abc"]);
    assert_eq!(bad_pixel.status.code(), Some(2));
}

#[test]
fn operational_errors_exit_one() {
    let missing = rockwatch(&[
        "solve",
        "--config",
        "/no/such/rig.toml",
        "--target-px",
        "10,10",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let dir = tempfile::tempdir().unwrap();
    let rig = write_rig(dir.path());
    let outside = rockwatch(&["solve", "--config", &rig, "--target-px", "9999,10"]);
    assert_eq!(outside.status.code(), Some(1));
}

#[test]
fn solve_center_pixel_is_a_zero_command() {
    let dir = tempfile::tempdir().unwrap();
    let rig = write_rig(dir.path());
    let out = rockwatch(&[
        "solve",
        "--config",
        &rig,
        "--target-px",
        "320,240",
        "--json",
    ]);
    let v = stdout_json(&out);
    // Laser sits at the origin in this rig, so the boresight needs no pan or
    // tilt at all.
    assert_eq!(v["pan_cmd"], 0.0);
    assert_eq!(v["tilt_cmd"], 0.0);
    assert_eq!(v["depth_m"], 2.0);
}

#[test]
fn solve_reads_config_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let rig = write_rig(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_rockwatch"))
        .args(["solve", "--target-px", "320,240", "--json"])
        .env("ROCKWATCH_CONFIG", &rig)
        .output()
        .expect("binary runs");
    let v = stdout_json(&out);
    assert_eq!(v["pan_cmd"], 0.0);
}

#[test]
fn simulate_converges_on_a_flat_scene() {
    let dir = tempfile::tempdir().unwrap();
    let rig = write_rig(dir.path());
    let out = rockwatch(&[
        "simulate",
        "--config",
        &rig,
        "--target-px",
        "500,130",
        "--depth",
        "1.4",
        "--json",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["status"], "converged");
    assert!(v["final_error_px"].as_f64().unwrap() <= 2.0);
    assert_eq!(v["laser_doused"], true);
}

#[test]
fn detect_stub_finds_the_rock_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("frame.png");
    let truth = scene_png(&img, vec![rock()]);
    let manifest = dir.path().join("pred.json");
    let out = rockwatch(&[
        "detect",
        "--image",
        img.to_str().unwrap(),
        "--out",
        manifest.to_str().unwrap(),
        "--json",
    ]);
    let v = stdout_json(&out);
    let boxes = v.as_array().expect("array of boxes");
    assert_eq!(boxes.len(), 1);
    let b = &boxes[0];
    let cx = b["x"].as_f64().unwrap() + b["w"].as_f64().unwrap() / 2.0;
    let cy = b["y"].as_f64().unwrap() + b["h"].as_f64().unwrap() / 2.0;
    assert!((cx - (truth[0].x + truth[0].w / 2.0)).abs() < 3.0);
    assert!((cy - (truth[0].y + truth[0].h / 2.0)).abs() < 3.0);

    let set = AnnotationSet::load(&manifest).expect("manifest parses");
    assert_eq!(set.records.len(), 1);
    assert_eq!(set.records[0].image, "frame.png");
    assert_eq!(set.records[0].boxes.len(), 1);
}

#[test]
fn detect_runs_an_external_detector_after_the_separator() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("frame.png");
    scene_png(&img, Vec::new());
    // A detector stub in shell: echo one fixed box back at whatever id the
    // request carried.
    let script = dir.path().join("fake-detector.sh");
    fs::write(
        &script,
        r#"#!/bin/sh
while read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":\([0-9]*\).*/\1/')
  printf '{"id":%s,"detections":[{"x":5,"y":6,"w":20,"h":10,"score":0.9,"class_id":2}]}\n' "$id"
done
"#,
    )
    .unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();

    let out = rockwatch(&[
        "detect",
        "--image",
        img.to_str().unwrap(),
        "--json",
        "--",
        script.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    assert_eq!(v[0]["x"], 5.0);
    assert_eq!(v[0]["class_id"], 2);
    assert_eq!(v[0]["score"], 0.9);
}

#[test]
fn slice_writes_patches_and_remapped_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("frame.png");
    let truth = scene_png(&img, vec![rock()]);
    let ann = dir.path().join("gt.json");
    AnnotationSet {
        records: vec![AnnotationRecord {
            image: "frame.png".into(),
            boxes: truth,
        }],
    }
    .save(&ann)
    .unwrap();

    let out_dir = dir.path().join("tiles");
    let out = rockwatch(&[
        "slice",
        "--image",
        img.to_str().unwrap(),
        "--patch",
        "320",
        "--ann",
        ann.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--json",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["rows"], 2);
    assert_eq!(v["cols"], 2);
    assert_eq!(v["overlap_x_px"], 0);
    assert_eq!(v["overlap_y_px"], 160);
    for name in ["frame_r0c0.png", "frame_r0c1.png", "frame_r1c0.png", "frame_r1c1.png"] {
        assert!(out_dir.join(name).is_file(), "{name} missing");
    }
    let tiles = AnnotationSet::load(&out_dir.join("tiles.json")).expect("tile manifest");
    assert_eq!(tiles.records.len(), 4);
    // The rock at (400, 300) falls in the bottom-right tile (x0 320, y0 160).
    let r1c1 = tiles.find("frame_r1c1.png").expect("record");
    assert_eq!(r1c1.boxes.len(), 1);
    assert_eq!(r1c1.boxes[0].x, 400.0 - 14.0 - 320.0);
}

#[test]
fn augment_is_reproducible_and_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("frame.png");
    let truth = scene_png(&img, vec![rock()]);
    let ann = dir.path().join("gt.json");
    AnnotationSet {
        records: vec![AnnotationRecord {
            image: "frame.png".into(),
            boxes: truth,
        }],
    }
    .save(&ann)
    .unwrap();

    let run = |out_dir: &Path| {
        let out = rockwatch(&[
            "augment",
            "--image",
            img.to_str().unwrap(),
            "--ann",
            ann.to_str().unwrap(),
            "--count",
            "3",
            "--seed",
            "5",
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--json",
        ]);
        stdout_json(&out);
    };
    let d1 = dir.path().join("aug1");
    let d2 = dir.path().join("aug2");
    run(&d1);
    run(&d2);

    let set = AnnotationSet::load(&d1.join("annotations.json")).expect("annotations");
    assert_eq!(set.records.len(), 3);
    assert!(set.records.iter().all(|r| !r.boxes.is_empty()));
    let traces: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d1.join("traces.json")).unwrap()).unwrap();
    let traces = traces.as_array().expect("trace array");
    assert_eq!(traces.len(), 3);
    assert_eq!(traces[2]["sample_index"], 2);

    // Same seed, same bytes.
    for name in ["frame_aug000.png", "frame_aug001.png", "frame_aug002.png"] {
        let a = fs::read(d1.join(name)).unwrap();
        let b = fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn dedup_groups_exact_copies() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    scene_png(&a, vec![rock()]);
    fs::copy(&a, dir.path().join("b.png")).unwrap();
    let c = image::RgbImage::from_fn(64, 64, |x, y| image::Rgb([(4 * x) as u8, (4 * y) as u8, 0]));
    c.save(dir.path().join("c.png")).unwrap();

    let manifest_path = dir.path().join("dups.json");
    let out = rockwatch(&[
        "dedup",
        "--dir",
        dir.path().to_str().unwrap(),
        "--out",
        manifest_path.to_str().unwrap(),
        "--json",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["scanned"], 3);
    assert_eq!(v["hashed"], 3);
    assert_eq!(v["singletons"], 1);
    assert_eq!(v["groups"].as_array().unwrap().len(), 1);
    let members = v["groups"][0]["members"].as_array().unwrap();
    assert_eq!(members.len(), 2);
    assert_eq!(v["groups"][0]["keep"], members[0]);
    assert!(manifest_path.is_file());
}

#[test]
fn eval_matches_within_images_only() {
    let dir = tempfile::tempdir().unwrap();
    let boxed = |x: f64, y: f64, w: f64, h: f64, score: Option<f64>| BoxRecord {
        x,
        y,
        w,
        h,
        class_id: 0,
        score,
    };
    let gt = AnnotationSet {
        records: vec![
            AnnotationRecord {
                image: "one.png".into(),
                boxes: vec![boxed(10.0, 10.0, 40.0, 40.0, None)],
            },
            AnnotationRecord {
                image: "two.png".into(),
                boxes: vec![boxed(5.0, 5.0, 30.0, 30.0, None)],
            },
        ],
    };
    // The second prediction sits at image one's ground-truth coordinates but
    // inside image two, so it must count as a false positive.
    let pred = AnnotationSet {
        records: vec![
            AnnotationRecord {
                image: "one.png".into(),
                boxes: vec![boxed(10.0, 10.0, 40.0, 40.0, Some(0.9))],
            },
            AnnotationRecord {
                image: "two.png".into(),
                boxes: vec![boxed(10.0, 10.0, 40.0, 40.0, Some(0.8))],
            },
        ],
    };
    let gt_path = dir.path().join("gt.json");
    let pred_path = dir.path().join("pred.json");
    gt.save(&gt_path).unwrap();
    pred.save(&pred_path).unwrap();

    let out = rockwatch(&[
        "eval",
        "--pred",
        pred_path.to_str().unwrap(),
        "--gt",
        gt_path.to_str().unwrap(),
        "--json",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["true_positives"], 1);
    assert_eq!(v["false_positives"], 1);
    assert_eq!(v["false_negatives"], 1);
    assert_eq!(v["precision"], 0.5);
    assert_eq!(v["recall"], 0.5);
    assert_eq!(v["average_precision"], 0.5);
}

#[test]
fn run_consumes_a_frame_directory_and_replay_verifies_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    fs::create_dir(&frames).unwrap();
    scene_png(&frames.join("f0.png"), Vec::new());
    scene_png(&frames.join("f1.png"), vec![rock()]);
    scene_png(&frames.join("f2.png"), Vec::new());

    let log = dir.path().join("events.jsonl");
    let config = dir.path().join("pipeline.toml");
    fs::write(
        &config,
        format!(
            r#"
rate_hz = 1000.0
debounce_enter_frames = 1
clear_after_frames = 1
event_log_path = "{}"

[camera]
width = 640
height = 480
fov_h_deg = 66.0
mount_height_m = 2.0

[laser]
x_m = 0.3

[frames]
dir = "{}"
poll_ms = 10
max_frames = 3
"#,
            log.display(),
            frames.display()
        ),
    )
    .unwrap();

    let out = rockwatch(&["run", "--config", config.to_str().unwrap(), "--json"]);
    let v = stdout_json(&out);
    assert_eq!(v["frames"], 3);
    assert_eq!(v["enters"], 1);
    assert_eq!(v["clears"], 1);
    assert_eq!(v["degraded"], false);

    // The recorded log replays cleanly under the parameters it ran with.
    let ok = rockwatch(&[
        "replay",
        "--log",
        log.to_str().unwrap(),
        "--clear-after",
        "1",
    ]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&ok.stderr)
    );

    // Wrong parameters are caught as an inconsistency.
    let bad = rockwatch(&[
        "replay",
        "--log",
        log.to_str().unwrap(),
        "--debounce-enter",
        "2",
        "--clear-after",
        "1",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}
