use std::sync::Arc;

use lcc_core::geometry::{error_metrics, reprojection_error};
use lcc_core::pipeline::{
    calibrate_scene, run_calibration, MultiSceneStatus, PipelineConfig, SceneInput, VirtualMasks,
};
use lcc_core::synthetic::{
    default_intrinsics, generate, random_extrinsic, random_scene, LidarModel, NoiseSpec,
};
use lcc_core::{CalibError, Pose};

fn oracle() -> PipelineConfig {
    PipelineConfig {
        virtual_masks: VirtualMasks::Oracle,
        ..Default::default()
    }
}

fn scenes(truth: Pose, seeds: std::ops::Range<u64>, noise: NoiseSpec) -> Vec<SceneInput> {
    seeds
        .map(|s| {
            let spec = random_scene(s, 5, truth, LidarModel::solid_state(100_000), noise);
            SceneInput::from_synthetic(format!("scene{s}"), Arc::new(generate(&spec).unwrap()))
        })
        .collect()
}

#[test]
fn noiseless_correspondences_reproject_within_two_pixels() {
    let k = default_intrinsics();
    let truth = random_extrinsic(21, 2.0, 0.3);
    let mut total = 0;
    let mut good = 0;
    for (i, input) in scenes(truth, 0..4, NoiseSpec::default()).iter().enumerate() {
        let out = calibrate_scene(i, input, &k, &oracle()).unwrap();
        for c in out.bundle.pooled() {
            total += 1;
            if reprojection_error(&c.pair(), &truth, &k).unwrap_or(f64::INFINITY) <= 2.0 {
                good += 1;
            }
        }
    }
    assert!(total >= 40, "only {total} correspondences");
    let frac = good as f64 / total as f64;
    assert!(frac >= 0.95, "{good}/{total} within 2 px");
}

#[test]
fn failed_scene_is_isolated() {
    let k = default_intrinsics();
    let truth = random_extrinsic(8, 2.0, 0.3);
    let mut inputs = scenes(truth, 10..13, NoiseSpec::default());
    inputs[1].masks.clear();
    inputs[1].depth_masks.clear();
    let r = run_calibration(&inputs, &k, &oracle(), 2).unwrap();
    assert_eq!(r.scenes.len(), 2);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].0, 1);
    assert!(r.skipped[0].2.starts_with("NoMasks"), "{}", r.skipped[0].2);
    assert!(matches!(
        r.multi_scene,
        MultiSceneStatus::Joint { scenes: 2, .. }
    ));
    assert!(error_metrics(&r.pose, &truth).rotation_deg < 1e-2);
}

#[test]
fn every_scene_failing_is_an_error() {
    let k = default_intrinsics();
    let mut inputs = scenes(random_extrinsic(2, 2.0, 0.3), 0..2, NoiseSpec::default());
    for s in &mut inputs {
        s.masks.clear();
        s.depth_masks.clear();
    }
    assert!(matches!(
        run_calibration(&inputs, &k, &oracle(), 1),
        Err(CalibError::InsufficientCorrespondences { .. })
    ));
}

#[test]
fn image_size_must_match_intrinsics() {
    let mut k = default_intrinsics();
    k.width = 320;
    let inputs = scenes(random_extrinsic(2, 2.0, 0.3), 0..1, NoiseSpec::default());
    assert!(calibrate_scene(0, &inputs[0], &k, &oracle()).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let k = default_intrinsics();
    let noise = NoiseSpec {
        pixel_sigma: 1.0,
        outlier_rate: 0.2,
        ..Default::default()
    };
    let inputs = scenes(random_extrinsic(30, 2.0, 0.3), 40..43, noise);
    let a = run_calibration(&inputs, &k, &oracle(), 1).unwrap();
    let b = run_calibration(&inputs, &k, &oracle(), 3).unwrap();
    assert_eq!(a.pose, b.pose);
    assert_eq!(a.multi_scene, b.multi_scene);
}

#[test]
fn single_scene_mode_skips_the_joint_solve() {
    let k = default_intrinsics();
    let truth = random_extrinsic(6, 2.0, 0.3);
    let cfg = PipelineConfig {
        single_scene: true,
        ..oracle()
    };
    let r = run_calibration(&scenes(truth, 0..2, NoiseSpec::default()), &k, &cfg, 2).unwrap();
    assert!(matches!(r.multi_scene, MultiSceneStatus::Skipped(_)));
    assert!(error_metrics(&r.pose, &truth).rotation_deg < 1e-2);
}
