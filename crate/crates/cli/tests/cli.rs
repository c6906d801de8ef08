use std::path::Path;
use std::process::{Command, Output};

use lcc_core::geometry::error_metrics;
use lcc_core::report::{parse_errors, parse_pose_block};

fn lcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcc"))
        .args(args)
        .output()
        .expect("lcc runs")
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap(), "--seed", "4"];
    args.extend_from_slice(extra);
    let out = lcc(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn calibrate(dir: &Path, out: &str, extra: &[&str]) -> (Output, String) {
    let cfg = dir.join("config.toml");
    let out_dir = dir.join(out);
    let mut args = vec![
        "calibrate",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    if !extra.contains(&"--jobs") {
        args.extend_from_slice(&["--jobs", "4"]);
    }
    let o = lcc(&args);
    let report = std::fs::read_to_string(out_dir.join("report.txt")).unwrap_or_default();
    (o, report)
}

#[test]
fn noiseless_five_scenes_recover_the_extrinsic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--scenes", "5"]);
    let (out, report) = calibrate(dir.path(), "out", &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(report.contains("scenes: 5 of 5 calibrated"), "{report}");
    assert!(
        report.contains("multi-scene: joint over 5 scenes"),
        "{report}"
    );
    let (e_r, e_t) = parse_errors(&report).expect("report carries errors");
    assert!(e_r < 1e-3, "e_r = {e_r}");
    assert!(e_t < 1e-3, "e_t = {e_t}");

    // The stated errors agree with a recomputation from the report's pose.
    let estimate = parse_pose_block(&report).unwrap();
    let truth =
        parse_pose_block(&std::fs::read_to_string(dir.path().join("ground_truth.txt")).unwrap())
            .unwrap();
    let e = error_metrics(&estimate, &truth);
    assert!(
        (e.rotation_deg - e_r).abs() < 1e-6,
        "{} vs {e_r}",
        e.rotation_deg
    );
    assert!(
        (e.translation_m - e_t).abs() < 1e-6,
        "{} vs {e_t}",
        e.translation_m
    );

    assert!(dir
        .path()
        .join("out/correspondences/000_scene0.csv")
        .exists());

    // `eval` reproduces the same numbers.
    let ev = lcc(&["eval", dir.path().join("out/report.txt").to_str().unwrap()]);
    assert!(ev.status.success());
    let text = String::from_utf8_lossy(&ev.stdout);
    assert_eq!(parse_errors(&text), Some((e_r, e_t)), "{text}");
}

#[test]
fn single_scene_flag_skips_the_joint_refinement() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        &[
            "--scenes",
            "1",
            "--lidar",
            "solid-state",
            "--samples",
            "200000",
            "--primitives",
            "6",
        ],
    );
    let (out, report) = calibrate(dir.path(), "out", &["--single-scene", "--overlay"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        report.contains("multi-scene: skipped (single-scene mode)"),
        "{report}"
    );
    assert!(parse_pose_block(&report).is_ok());
    assert!(dir.path().join("out/overlays/000_scene0.png").exists());
}

#[test]
fn missing_mask_file_skips_only_that_scene() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--scenes", "5"]);
    std::fs::remove_file(dir.path().join("scene2.masks.jsonl")).unwrap();
    let (out, report) = calibrate(dir.path(), "out", &[]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(report.contains("scenes: 4 of 5 calibrated"), "{report}");
    let line = report
        .lines()
        .find(|l| l.starts_with("scene 2 scene2:"))
        .expect("scene 2 is listed");
    assert!(line.contains("skipped, FormatError"), "{line}");
    for i in [0, 1, 3, 4] {
        let prefix = format!("scene {i} scene{i}: views");
        assert!(report.lines().any(|l| l.starts_with(&prefix)), "{report}");
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        &[
            "--scenes",
            "3",
            "--pixel-sigma",
            "1",
            "--outlier-rate",
            "0.1",
        ],
    );
    let (a, ra) = calibrate(dir.path(), "a", &["--seed", "9"]);
    let (b, rb) = calibrate(dir.path(), "b", &["--seed", "9", "--jobs", "1"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    assert!(!ra.is_empty());
    assert_eq!(ra, rb);
}

#[test]
fn total_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--scenes", "2"]);
    for i in 0..2 {
        std::fs::remove_file(dir.path().join(format!("scene{i}.png"))).unwrap();
    }
    let (out, _) = calibrate(dir.path(), "out", &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_intrinsics_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "scenes = [\"x\"]\n").unwrap();
    let out = lcc(&["calibrate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("intrinsics"));
}

#[test]
fn empty_sweep_writes_one_baseline_row() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.toml");
    std::fs::write(
        &spec,
        "trials = 1\n[trial]\nscenes = 2\n[pipeline]\nvirtual_masks = \"oracle\"\n",
    )
    .unwrap();
    let csv = dir.path().join("out.csv");
    let out = lcc(&[
        "experiment",
        spec.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[1].starts_with("baseline,-,"), "{text}");
}
