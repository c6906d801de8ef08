//! Feature density of segmented images and virtual-camera planning.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::{forward_facing_rotation, Intrinsics, Pose};
use crate::masks::{union_area, Mask};
use crate::projection::{Channel, FieldOfView};

/// Masks smaller than this are ignored by [`feature_density`].
pub const MIN_DENSITY_AREA: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureDensity {
    pub textural: f64,
    pub structural: f64,
    pub total: f64,
}

impl FeatureDensity {
    pub const ZERO: FeatureDensity = FeatureDensity {
        textural: 0.0,
        structural: 0.0,
        total: 0.0,
    };

    /// `ρ_t = ln((Σ m_i)²)`, `ρ_s = Σ ln(|∪M| / |M_i|)`, `ρ = ρ_t·ρ_s`.
    pub fn from_stats(corner_counts: &[usize], areas: &[usize], union: usize) -> Result<Self> {
        if corner_counts.is_empty() || corner_counts.len() != areas.len() {
            return Err(CalibError::NoMasks);
        }
        let m: usize = corner_counts.iter().sum();
        let textural = ((m * m) as f64).ln();
        let structural: f64 = areas.iter().map(|&a| (union as f64 / a as f64).ln()).sum();
        Ok(Self {
            textural,
            structural,
            total: textural * structural,
        })
    }
}

/// Density of a segmented image. Masks under 9 px are dropped first.
pub fn feature_density(masks: &[Mask]) -> Result<FeatureDensity> {
    let kept: Vec<Mask> = masks
        .iter()
        .filter(|m| m.area >= MIN_DENSITY_AREA && !m.corners.is_empty())
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(CalibError::NoMasks);
    }
    let counts: Vec<usize> = kept.iter().map(|m| m.corners.len()).collect();
    let areas: Vec<usize> = kept.iter().map(|m| m.area).collect();
    // Rasterized union can differ slightly from stored areas; it never drops below the largest mask.
    let union = union_area(&kept).max(*areas.iter().max().unwrap());
    FeatureDensity::from_stats(&counts, &areas, union)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CameraStrategy {
    #[default]
    DensityBalance,
    FovRatio,
    InitialGuess,
    Manual,
}

impl std::str::FromStr for CameraStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "density" | "density-balance" => Ok(Self::DensityBalance),
            "fov" | "fov-ratio" => Ok(Self::FovRatio),
            "initial-guess" | "initial" => Ok(Self::InitialGuess),
            "manual" => Ok(Self::Manual),
            _ => Err(format!(
                "unknown camera strategy `{s}` (density, fov, initial-guess, manual)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub strategy: CameraStrategy,
    /// Sphere radius for virtual viewpoints, meters.
    pub radius: f64,
    pub n_max: usize,
    /// Cameras per FoV-ratio unit.
    pub rho_fov: usize,
    /// Cameras per meter of initial translation.
    pub per_meter: f64,
    /// Counts used by the manual strategy.
    pub manual_intensity: usize,
    pub manual_depth: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            strategy: CameraStrategy::DensityBalance,
            radius: 0.3,
            n_max: 7,
            rho_fov: 1,
            per_meter: 10.0,
            manual_intensity: 1,
            manual_depth: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPlan {
    pub strategy: CameraStrategy,
    pub n_intensity: usize,
    pub n_depth: usize,
    pub intensity_poses: Vec<Pose>,
    pub depth_poses: Vec<Pose>,
}

impl CameraPlan {
    pub fn views(&self) -> impl Iterator<Item = (Channel, &Pose)> {
        self.intensity_poses
            .iter()
            .map(|p| (Channel::Intensity, p))
            .chain(self.depth_poses.iter().map(|p| (Channel::Depth, p)))
    }
}

/// Viewpoint centers in fixed order: origin, ±X, ±Y, ±Z at `r`, then the six axis
/// points again at `r/2`, `r/4`, ...
pub fn sphere_positions(n: usize, radius: f64) -> Vec<Vector3<f64>> {
    let axes = [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
    ];
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(Vector3::zeros());
    let mut r = radius;
    while out.len() < n {
        for a in &axes {
            if out.len() == n {
                break;
            }
            out.push(a * r);
        }
        r *= 0.5;
    }
    out
}

fn sphere_poses(
    n: usize,
    radius: f64,
    rotation: Rotation3<f64>,
    anchor: Vector3<f64>,
) -> Vec<Pose> {
    sphere_positions(n, radius)
        .into_iter()
        .map(|c| Pose::looking_from(rotation, anchor + c))
        .collect()
}

/// `ceil(ρ_camera / ρ_baseline)` clamped to `[1, n_max]`.
pub fn density_count(camera: f64, baseline: f64, n_max: usize, channel: Channel) -> Result<usize> {
    if !(baseline > 0.0) {
        return Err(CalibError::ZeroBaselineDensity {
            channel: channel.name(),
        });
    }
    let ratio = (camera / baseline).max(0.0);
    let n = if ratio.is_finite() {
        ratio.ceil() as usize
    } else {
        n_max
    };
    Ok(n.clamp(1, n_max.max(1)))
}

/// Per-channel counts balancing camera-side density against the front view's.
/// A zero baseline falls back to one camera for that channel.
pub fn plan_cameras_density(
    camera_rgb: &FeatureDensity,
    camera_depth: &FeatureDensity,
    lidar_intensity: &FeatureDensity,
    lidar_depth: &FeatureDensity,
    cfg: &PlanConfig,
    rotation: Rotation3<f64>,
) -> CameraPlan {
    let count = |cam: f64, base: f64, ch: Channel| {
        density_count(cam, base, cfg.n_max, ch).unwrap_or_else(|e| {
            log::warn!("{e}; using one {} camera", ch.name());
            1
        })
    };
    let n_i = count(camera_rgb.total, lidar_intensity.total, Channel::Intensity);
    let n_d = count(camera_depth.total, lidar_depth.total, Channel::Depth);
    CameraPlan {
        strategy: CameraStrategy::DensityBalance,
        n_intensity: n_i,
        n_depth: n_d,
        intensity_poses: sphere_poses(n_i, cfg.radius, rotation, Vector3::zeros()),
        depth_poses: sphere_poses(n_d, cfg.radius, rotation, Vector3::zeros()),
    }
}

pub fn fov_camera_count(lidar_fov: &FieldOfView, cam: &Intrinsics, rho_fov: usize) -> usize {
    let ratio = lidar_fov.horizontal / cam.horizontal_fov_deg();
    // Guard against 90.0000001 / 90 style float noise.
    let units = (ratio - 1e-9).ceil().max(1.0) as usize;
    rho_fov.max(1) * units
}

/// Cameras at the LiDAR origin, yawed evenly across the horizontal FoV.
pub fn plan_cameras_fov(lidar_fov: &FieldOfView, cam: &Intrinsics, rho_fov: usize) -> CameraPlan {
    let n = fov_camera_count(lidar_fov, cam, rho_fov);
    let span = lidar_fov.horizontal.min(360.0);
    let poses: Vec<Pose> = (0..n)
        .map(|i| {
            let yaw = if span >= 360.0 {
                i as f64 * 360.0 / n as f64
            } else {
                -span / 2.0 + (i as f64 + 0.5) * span / n as f64
            };
            let rot = forward_facing_rotation()
                * Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw.to_radians());
            Pose::looking_from(rot, Vector3::zeros())
        })
        .collect();
    CameraPlan {
        strategy: CameraStrategy::FovRatio,
        n_intensity: n,
        n_depth: n,
        intensity_poses: poses.clone(),
        depth_poses: poses,
    }
}

/// `n = max(1, round(m·‖c‖))` viewpoints evenly spaced from the LiDAR origin to the
/// initial camera center `c`, all with the initial orientation.
pub fn plan_cameras_initial_guess(initial: &Pose, per_meter: f64) -> CameraPlan {
    let center = initial.camera_center();
    let n = ((per_meter * center.norm()).round() as usize).max(1);
    let poses: Vec<Pose> = (0..n)
        .map(|i| {
            let f = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            Pose::looking_from(*initial.rotation(), center * f)
        })
        .collect();
    CameraPlan {
        strategy: CameraStrategy::InitialGuess,
        n_intensity: n,
        n_depth: n,
        intensity_poses: poses.clone(),
        depth_poses: poses,
    }
}

pub fn plan_cameras_manual(cfg: &PlanConfig, rotation: Rotation3<f64>) -> CameraPlan {
    let (n_i, n_d) = (cfg.manual_intensity.max(1), cfg.manual_depth.max(1));
    CameraPlan {
        strategy: CameraStrategy::Manual,
        n_intensity: n_i,
        n_depth: n_d,
        intensity_poses: sphere_poses(n_i, cfg.radius, rotation, Vector3::zeros()),
        depth_poses: sphere_poses(n_d, cfg.radius, rotation, Vector3::zeros()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polygon::Point2;
    use proptest::prelude::*;

    fn density(total: f64) -> FeatureDensity {
        FeatureDensity {
            textural: total,
            structural: 1.0,
            total,
        }
    }

    fn square_mask(id: usize, x: f64, y: f64, side: f64, corners: usize) -> Mask {
        let mut m = Mask::from_polygon(
            id,
            vec![
                Point2::new(x, y),
                Point2::new(x + side, y),
                Point2::new(x + side, y + side),
                Point2::new(x, y + side),
            ],
        )
        .unwrap();
        m.corners = (0..corners)
            .map(|_| crate::masks::CornerPoint {
                position: Point2::new(x, y),
                neighbors: Vec::new(),
                texture: Vec::new(),
                lidar_point: None,
            })
            .collect();
        m
    }

    #[test]
    fn single_mask_has_zero_structural_density() {
        let d = feature_density(&[square_mask(0, 0.0, 0.0, 9.0, 4)]).unwrap();
        assert_eq!(d.structural, 0.0);
        assert_eq!(d.total, 0.0);
    }

    #[test]
    fn two_disjoint_masks_hand_value() {
        // 10x10 pixel squares (side 9 through pixel centers).
        let masks = [
            square_mask(0, 0.0, 0.0, 9.0, 4),
            square_mask(1, 20.0, 0.0, 9.0, 4),
        ];
        assert_eq!(masks[0].area, 100);
        let d = feature_density(&masks).unwrap();
        assert!((d.textural - 64f64.ln()).abs() < 1e-12);
        assert!((d.structural - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((d.total - 64f64.ln() * 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((d.total - 5.7655).abs() < 1e-4);
    }

    #[test]
    fn doubling_corner_counts_adds_two_ln_two() {
        let a = FeatureDensity::from_stats(&[4, 5, 3], &[100, 50, 20], 170).unwrap();
        let b = FeatureDensity::from_stats(&[8, 10, 6], &[100, 50, 20], 170).unwrap();
        // ln((2m)²) − ln(m²) = 2 ln 2
        assert!((b.textural - a.textural - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(a.structural, b.structural);
    }

    #[test]
    fn empty_and_tiny_masks_are_no_masks() {
        assert!(matches!(feature_density(&[]), Err(CalibError::NoMasks)));
        assert!(matches!(
            feature_density(&[square_mask(0, 0.0, 0.0, 1.0, 4)]),
            Err(CalibError::NoMasks)
        ));
    }

    #[test]
    fn density_counts() {
        let cfg = PlanConfig::default();
        let r = forward_facing_rotation();
        let plan = plan_cameras_density(
            &density(12.0),
            &density(4.0),
            &density(4.0),
            &density(4.0),
            &cfg,
            r,
        );
        assert_eq!((plan.n_intensity, plan.n_depth), (3, 1));
        let plan = plan_cameras_density(
            &density(100.0),
            &density(5.0),
            &density(1.0),
            &density(5.0),
            &cfg,
            r,
        );
        assert_eq!(plan.n_intensity, 7);
        assert_eq!(plan.intensity_poses.len(), 7);
        assert!(matches!(
            density_count(3.0, 0.0, 7, Channel::Depth),
            Err(CalibError::ZeroBaselineDensity { channel: "depth" })
        ));
        let plan = plan_cameras_density(
            &density(3.0),
            &density(3.0),
            &density(0.0),
            &density(0.0),
            &cfg,
            r,
        );
        assert_eq!((plan.n_intensity, plan.n_depth), (1, 1));
    }

    #[test]
    fn sphere_positions_order_and_radius() {
        let p = sphere_positions(9, 0.3);
        assert_eq!(p[0], Vector3::zeros());
        assert_eq!(p[1], Vector3::new(0.3, 0.0, 0.0));
        assert_eq!(p[2], Vector3::new(-0.3, 0.0, 0.0));
        assert_eq!(p[6], Vector3::new(0.0, 0.0, -0.3));
        assert_eq!(p[7], Vector3::new(0.15, 0.0, 0.0));
        let plan = plan_cameras_manual(
            &PlanConfig {
                manual_intensity: 13,
                ..Default::default()
            },
            forward_facing_rotation(),
        );
        for pose in &plan.intensity_poses {
            assert!(pose.translation().norm() <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn fov_counts() {
        // fx chosen so the camera sees exactly 90° horizontally.
        let k = Intrinsics::new(50.0, 50.0, 50.0, 50.0, 100, 100).unwrap();
        assert!((k.horizontal_fov_deg() - 90.0).abs() < 1e-12);
        let fov = |h: f64| FieldOfView {
            horizontal: h,
            vertical: 30.0,
        };
        assert_eq!(plan_cameras_fov(&fov(360.0), &k, 1).n_intensity, 4);
        assert_eq!(plan_cameras_fov(&fov(90.0), &k, 3).n_intensity, 3);
        assert_eq!(plan_cameras_fov(&fov(91.0), &k, 1).n_intensity, 2);
    }

    #[test]
    fn fov_cameras_face_their_yaw() {
        let k = Intrinsics::new(50.0, 50.0, 50.0, 50.0, 100, 100).unwrap();
        let plan = plan_cameras_fov(
            &FieldOfView {
                horizontal: 360.0,
                vertical: 30.0,
            },
            &k,
            1,
        );
        // Second camera at yaw 90° looks along +Y of the LiDAR.
        let p = plan.intensity_poses[1].transform_point(&Vector3::new(0.0, 5.0, 0.0));
        assert!((p - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn initial_guess_counts_and_spacing() {
        let init = Pose::looking_from(forward_facing_rotation(), Vector3::new(0.0, 0.0, 0.3));
        assert_eq!(plan_cameras_initial_guess(&init, 10.0).n_intensity, 3);
        let plan = plan_cameras_initial_guess(
            &Pose::looking_from(forward_facing_rotation(), Vector3::zeros()),
            10.0,
        );
        assert_eq!(plan.n_intensity, 1);
        assert_eq!(plan.intensity_poses[0].camera_center(), Vector3::zeros());
        let c = Vector3::new(0.6, 0.0, 0.8);
        let plan =
            plan_cameras_initial_guess(&Pose::looking_from(forward_facing_rotation(), c), 4.0);
        assert_eq!(plan.n_intensity, 4);
        for (i, pose) in plan.intensity_poses.iter().enumerate() {
            assert!((pose.camera_center() - c * (i as f64 / 3.0)).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn density_permutation_and_scale_invariance(
            stats in prop::collection::vec((1usize..20, 1usize..500), 1..8),
            extra in 0usize..1000,
            scale in 1usize..50,
            rot in 0usize..8,
        ) {
            let counts: Vec<usize> = stats.iter().map(|s| s.0).collect();
            let areas: Vec<usize> = stats.iter().map(|s| s.1).collect();
            let union = areas.iter().sum::<usize>() + extra;
            let base = FeatureDensity::from_stats(&counts, &areas, union).unwrap();
            prop_assert!(base.structural >= 0.0);

            let k = rot % counts.len();
            let mut c2 = counts.clone();
            let mut a2 = areas.clone();
            c2.rotate_left(k);
            a2.rotate_left(k);
            let perm = FeatureDensity::from_stats(&c2, &a2, union).unwrap();
            prop_assert!((perm.total - base.total).abs() <= 1e-9 * base.total.abs().max(1.0));

            let scaled: Vec<usize> = areas.iter().map(|a| a * scale).collect();
            let s = FeatureDensity::from_stats(&counts, &scaled, union * scale).unwrap();
            prop_assert!((s.structural - base.structural).abs() < 1e-12);
        }

        #[test]
        fn density_counts_are_monotone(cam in 0.0..50.0f64, base in 0.01..20.0f64, d in 0.0..10.0f64) {
            let n = density_count(cam, base, 7, Channel::Intensity).unwrap();
            prop_assert!((1..=7).contains(&n));
            prop_assert!(density_count(cam + d, base, 7, Channel::Intensity).unwrap() >= n);
            prop_assert!(density_count(cam, base + d, 7, Channel::Intensity).unwrap() <= n);
        }

        #[test]
        fn every_strategy_yields_a_camera(h in 1.0..360.0f64, f in 10.0..2000.0f64, cx in -3.0..3.0f64, m in 0.1..20.0f64) {
            let k = Intrinsics::new(f, f, 320.0, 240.0, 640, 480).unwrap();
            let fov = FieldOfView { horizontal: h, vertical: 10.0 };
            let n = plan_cameras_fov(&fov, &k, 1).n_intensity;
            prop_assert!(n >= 1);
            let init = Pose::looking_from(forward_facing_rotation(), Vector3::new(cx, 0.0, 0.0));
            let plan = plan_cameras_initial_guess(&init, m);
            prop_assert!(plan.n_intensity >= 1 && plan.n_depth >= 1);
        }
    }
}
