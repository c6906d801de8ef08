//! End-to-end calibration: camera planning, rendering, dual-path matching,
//! per-scene multi-view solves and the joint multi-scene refinement.

use std::sync::Arc;

use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::discriminator::{
    feature_density, plan_cameras_density, plan_cameras_fov, plan_cameras_initial_guess,
    plan_cameras_manual, CameraPlan, CameraStrategy, PlanConfig,
};
use crate::dpcm::{match_corners, match_masks, CorrespondenceSet, MatchConfig, Pathway};
use crate::error::{CalibError, Result};
use crate::geometry::{forward_facing_rotation, Intrinsics, Pose};
use crate::masks::{extract_corners, synthetic_segment, CornerConfig, Mask};
use crate::optimizer::{
    multi_scene_solve, multi_view_solve, select_scene_subsets, LossContext, SceneBundle,
    SceneSolution, SolveConfig,
};
use crate::projection::{estimate_fov, render, Channel, ProjectionImage, VirtualCamera};
use crate::raster::Raster;
use crate::synthetic::SyntheticScene;

/// Produces masks for a rendered LiDAR view.
pub trait ViewSegmenter: Send + Sync {
    fn segment(&self, view: &ProjectionImage) -> Vec<Mask>;
}

/// Quantize-and-label segmentation of the view's texture image.
#[derive(Debug, Clone, Copy)]
pub struct LevelSegmenter {
    pub levels: usize,
}

impl ViewSegmenter for LevelSegmenter {
    fn segment(&self, view: &ProjectionImage) -> Vec<Mask> {
        let tex = match view.camera().channel {
            Channel::Intensity => view.dilated(&view.values()),
            Channel::Depth => view.dilated(&view.texture()),
        };
        synthetic_segment(&tex, self.levels)
    }
}

impl ViewSegmenter for SyntheticScene {
    fn segment(&self, view: &ProjectionImage) -> Vec<Mask> {
        self.oracle_masks(view)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VirtualMasks {
    /// Segment rendered views with the built-in level segmenter.
    #[default]
    Segment,
    /// Exact face silhouettes; only available for generated scenes.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub plan: PlanConfig,
    pub corners: CornerConfig,
    pub matching: MatchConfig,
    pub solve: SolveConfig,
    pub initial_guess: Option<Pose>,
    /// Search radius when tracing a virtual corner back to the cloud, pixels.
    pub traceback_radius: f64,
    pub segment_levels: usize,
    pub virtual_masks: VirtualMasks,
    pub single_scene: bool,
    /// Fewer calibrated scenes than this only triggers a warning.
    pub min_scenes: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            plan: PlanConfig::default(),
            corners: CornerConfig::default(),
            matching: MatchConfig::default(),
            solve: SolveConfig::default(),
            initial_guess: None,
            traceback_radius: 40.0,
            segment_levels: 8,
            virtual_masks: VirtualMasks::Segment,
            single_scene: false,
            min_scenes: 5,
        }
    }
}

pub struct SceneInput {
    pub name: String,
    pub cloud: PointCloud,
    /// Grayscale camera image in `[0, 1]`.
    pub image: Raster,
    /// Camera depth (any positive scale, zero for unknown).
    pub depth: Raster,
    pub masks: Vec<Mask>,
    pub depth_masks: Vec<Mask>,
    pub segmenter: Arc<dyn ViewSegmenter>,
}

impl SceneInput {
    pub fn from_synthetic(name: impl Into<String>, scene: Arc<SyntheticScene>) -> Self {
        Self {
            name: name.into(),
            cloud: scene.cloud.clone(),
            image: scene.image.clone(),
            depth: scene.depth.clone(),
            masks: scene.masks.clone(),
            depth_masks: scene.depth_masks.clone(),
            segmenter: scene,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneOutcome {
    pub index: usize,
    pub name: String,
    pub plan: CameraPlan,
    pub bundle: SceneBundle,
    pub solution: SceneSolution,
}

impl SceneOutcome {
    /// Mean G per correspondence of the scene's best hypothesis.
    pub fn mean_score(&self) -> f64 {
        self.solution.best.score / self.bundle.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MultiSceneStatus {
    Skipped(String),
    Joint {
        scenes: usize,
        iterations: usize,
        converged: bool,
        loss: f64,
    },
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub pose: Pose,
    pub strategy: CameraStrategy,
    pub scenes: Vec<SceneOutcome>,
    /// `(index, name, reason)` of scenes that failed.
    pub skipped: Vec<(usize, String, String)>,
    pub multi_scene: MultiSceneStatus,
}

fn with_corners(masks: &[Mask], cfg: &CornerConfig, texture: Option<&Raster>) -> Vec<Mask> {
    masks
        .iter()
        .filter_map(|m| match extract_corners(m, cfg, texture) {
            Ok(m) => Some(m),
            Err(e) => {
                log::debug!("{e}");
                None
            }
        })
        .collect()
}

/// Renders a view, segments it and attaches corner textures and LiDAR points.
fn virtual_masks(input: &SceneInput, view: &ProjectionImage, cfg: &PipelineConfig) -> Vec<Mask> {
    let texture = match view.camera().channel {
        Channel::Intensity => view.dilated(&view.values()),
        Channel::Depth => view.dilated(&view.texture()),
    };
    let mut masks = with_corners(&input.segmenter.segment(view), &cfg.corners, Some(&texture));
    for m in &mut masks {
        let poly = m.polygon.clone();
        for c in &mut m.corners {
            c.lidar_point = view.trace_back(&input.cloud, &c.position, &poly, cfg.traceback_radius);
        }
    }
    masks
}

fn base_rotation(cfg: &PipelineConfig) -> Rotation3<f64> {
    cfg.initial_guess
        .map(|p| *p.rotation())
        .unwrap_or_else(forward_facing_rotation)
}

fn plan(
    input: &SceneInput,
    k: &Intrinsics,
    cfg: &PipelineConfig,
    cam_masks: &[Mask],
    cam_depth_masks: &[Mask],
) -> Result<CameraPlan> {
    let rotation = base_rotation(cfg);
    match cfg.plan.strategy {
        CameraStrategy::DensityBalance => {
            let front = Pose::looking_from(rotation, nalgebra::Vector3::zeros());
            let density = |channel: Channel| -> Result<_> {
                let view = render(&input.cloud, &VirtualCamera::new(*k, front, channel))?;
                feature_density(&virtual_masks(input, &view, cfg))
            };
            Ok(plan_cameras_density(
                &feature_density(cam_masks)?,
                &feature_density(cam_depth_masks)?,
                &density(Channel::Intensity)?,
                &density(Channel::Depth)?,
                &cfg.plan,
                rotation,
            ))
        }
        CameraStrategy::FovRatio => Ok(plan_cameras_fov(
            &estimate_fov(&input.cloud)?,
            k,
            cfg.plan.rho_fov,
        )),
        CameraStrategy::InitialGuess => {
            let init = cfg.initial_guess.ok_or_else(|| {
                CalibError::InvalidInput("the initial-guess strategy needs an initial guess".into())
            })?;
            Ok(plan_cameras_initial_guess(&init, cfg.plan.per_meter))
        }
        CameraStrategy::Manual => Ok(plan_cameras_manual(&cfg.plan, rotation)),
    }
}

/// Runs discrimination, matching and the multi-view solve on one scene.
pub fn calibrate_scene(
    index: usize,
    input: &SceneInput,
    k: &Intrinsics,
    cfg: &PipelineConfig,
) -> Result<SceneOutcome> {
    if input.image.width() != k.width as usize || input.image.height() != k.height as usize {
        return Err(CalibError::InvalidInput(format!(
            "image is {}x{} but intrinsics say {}x{}",
            input.image.width(),
            input.image.height(),
            k.width,
            k.height
        )));
    }
    let cam_masks = with_corners(&input.masks, &cfg.corners, Some(&input.image));
    let cam_depth_tex = input.depth.normalized_positive();
    let cam_depth_masks = with_corners(&input.depth_masks, &cfg.corners, Some(&cam_depth_tex));
    if cam_masks.is_empty() && cam_depth_masks.is_empty() {
        return Err(CalibError::NoMasks);
    }
    let plan = plan(input, k, cfg, &cam_masks, &cam_depth_masks)?;
    let views: Vec<(Channel, Pose)> = plan.views().map(|(c, p)| (c, *p)).collect();
    let sets: Vec<CorrespondenceSet> = views
        .par_iter()
        .enumerate()
        .filter_map(|(v, (channel, pose))| {
            let view = render(&input.cloud, &VirtualCamera::new(*k, *pose, *channel)).ok()?;
            let vmasks = virtual_masks(input, &view, cfg);
            let (cmasks, pathway) = match channel {
                Channel::Intensity => (&cam_masks, Pathway::Textural),
                Channel::Depth => (&cam_depth_masks, Pathway::Spatial),
            };
            let matches = match_masks(&vmasks, cmasks, k.diagonal(), &cfg.matching).ok()?;
            let mut set = match_corners(&vmasks, cmasks, &matches, &cfg.matching, pathway, v);
            for c in &mut set.pairs {
                c.depth_norm = view.normalized_depth(pose.transform_point(&c.lidar).z);
            }
            log::debug!(
                "{}: view {v} ({}) gave {} pairs",
                input.name,
                channel.name(),
                set.len()
            );
            Some(set)
        })
        .collect();
    let mut bundle = SceneBundle::new(index, sets);
    let solution = multi_view_solve(&bundle, k, &cfg.solve, cfg.initial_guess.as_ref())?;
    bundle.hypotheses = solution.ranked.clone();
    Ok(SceneOutcome {
        index,
        name: input.name.clone(),
        plan,
        bundle,
        solution,
    })
}

/// Calibrates every scene (up to `jobs` at once), then refines jointly.
///
/// A scene that fails is reported in `skipped`; the call fails only when no
/// scene could be calibrated.
pub fn run_calibration(
    inputs: &[SceneInput],
    k: &Intrinsics,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<CalibrationResult> {
    k.validate()?;
    if inputs.is_empty() {
        return Err(CalibError::InvalidInput("no scenes given".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CalibError::InvalidInput(format!("thread pool: {e}")))?;
    let results: Vec<Result<SceneOutcome>> = pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, input)| calibrate_scene(i, input, k, cfg))
            .collect()
    });
    let mut scenes = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => scenes.push(s),
            Err(e) => {
                log::warn!("scene {} ({}) skipped: {e}", i, inputs[i].name);
                skipped.push((i, inputs[i].name.clone(), format!("{}: {e}", e.kind())));
            }
        }
    }
    if scenes.is_empty() {
        return Err(CalibError::InsufficientCorrespondences {
            needed: crate::optimizer::MIN_PNP_POINTS,
            got: 0,
        });
    }
    let best = scenes
        .iter()
        .min_by(|a, b| a.mean_score().total_cmp(&b.mean_score()))
        .map(|s| s.solution.best.pose)
        .unwrap();
    let (pose, multi_scene) = if cfg.single_scene {
        (best, MultiSceneStatus::Skipped("single-scene mode".into()))
    } else if scenes.len() < 2 {
        (
            best,
            MultiSceneStatus::Skipped("only one scene calibrated".into()),
        )
    } else {
        if scenes.len() < cfg.min_scenes {
            log::warn!(
                "{} scenes calibrated; at least {} are recommended for the joint refinement",
                scenes.len(),
                cfg.min_scenes
            );
        }
        let mut bundles: Vec<SceneBundle> = scenes.iter().map(|s| s.bundle.clone()).collect();
        select_scene_subsets(&mut bundles, cfg.solve.q_max, cfg.solve.s_max);
        let joint = multi_scene_solve(&bundles, k, &best, &cfg.solve)?;
        for (s, b) in scenes.iter_mut().zip(bundles) {
            s.bundle.subset = b.subset;
        }
        (
            joint.pose,
            MultiSceneStatus::Joint {
                scenes: scenes.len(),
                iterations: joint.iterations,
                converged: joint.converged,
                loss: joint.loss,
            },
        )
    };
    Ok(CalibrationResult {
        pose,
        strategy: cfg.plan.strategy,
        scenes,
        skipped,
        multi_scene,
    })
}

/// Residual statistics of a scene's correspondences under `pose`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub count: usize,
    pub inliers: usize,
    pub median_px: f64,
    pub mean_g: f64,
}

pub fn residual_stats(
    bundle: &SceneBundle,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &SolveConfig,
) -> ResidualStats {
    let pooled = bundle.pooled();
    let ctx = LossContext::new(&pooled, cfg.height(k));
    let mut res = ctx.residuals(pose, k);
    let inliers = res.iter().filter(|r| **r < cfg.inlier_px).count();
    res.sort_by(f64::total_cmp);
    let median_px = if res.is_empty() {
        f64::NAN
    } else {
        res[res.len() / 2]
    };
    let (g, _) = ctx.evaluate(pose, k);
    ResidualStats {
        count: pooled.len(),
        inliers,
        median_px,
        mean_g: g / pooled.len().max(1) as f64,
    }
}
