//! Rigid-body math, the pinhole camera model and calibration error metrics.
//!
//! Poses map LiDAR-frame points into the camera frame: `p_C = R p_L + t`.
//! Euler angles use the intrinsic Z-Y-X (yaw, pitch, roll) order, are stored
//! in radians and reported in degrees.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

/// Tolerance on `‖RᵀR − I‖` accepted when a rotation comes from outside.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rigid transform `[R | t]` from the LiDAR frame into a camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a raw matrix, rejecting anything that is not a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(CalibError::InvalidInput(
                "pose has non-finite entries".into(),
            ));
        }
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if defect > ORTHONORMAL_TOL || rotation.determinant() <= 0.0 {
            return Err(CalibError::InvalidInput(format!(
                "rotation is not in SO(3) (orthonormality defect {defect:.3e}, det {:.6})",
                rotation.determinant()
            )));
        }
        // Re-project so downstream products stay orthonormal to machine precision.
        let rotation = Rotation3::from_matrix_eps(&rotation, 1e-12, 50, Rotation3::identity());
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Like [`Pose::new`] but projects a slightly non-orthonormal matrix (e.g. one
    /// printed with few digits) onto the nearest rotation. Defects above 1e-3 are rejected.
    pub fn from_rounded(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if !defect.is_finite() || defect > 1e-3 || rotation.determinant() <= 0.0 {
            return Err(CalibError::InvalidInput(format!(
                "matrix is too far from a rotation (defect {defect:.3e})"
            )));
        }
        let r = Rotation3::from_matrix_eps(&rotation, 1e-14, 100, Rotation3::identity());
        Ok(Self::from_parts(r, translation))
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation,
        }
    }

    pub fn from_euler(angles: EulerAngles, translation: Vector3<f64>) -> Self {
        Self {
            rotation: angles.to_rotation(),
            translation,
        }
    }

    /// Pose whose camera sits at `center` (LiDAR frame) with the given orientation.
    pub fn looking_from(rotation: Rotation3<f64>, center: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.inverse();
        Pose {
            rotation: rinv,
            translation: -(rinv * self.translation),
        }
    }

    /// Camera position in the LiDAR frame, `−R⁻¹t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Left update `(Exp(ω), v) ∘ self` for `delta = [ω; v]`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dr = Rotation3::from_scaled_axis(omega);
        Pose {
            rotation: dr * self.rotation,
            translation: dr * self.translation + v,
        }
    }

    /// Rotation angle (degrees) and translation norm of `self⁻¹ ∘ other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        let m = rel.rotation.matrix();
        let axis = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        let angle = axis.norm().atan2(m.trace() - 1.0);
        (angle.to_degrees(), rel.translation.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .matrix()
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// Row-major rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let m = self.rotation.matrix();
        let repr = PoseRepr {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let r = repr.rotation;
        let m = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        Pose::from_rounded(m, Vector3::from(repr.translation)).map_err(serde::de::Error::custom)
    }
}

/// Rotation with the camera looking down the LiDAR +X axis (X forward, Y left, Z up).
pub fn forward_facing_rotation() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, -1.0, 0.0, //
        0.0, 0.0, -1.0, //
        1.0, 0.0, 0.0,
    ))
}

/// Pinhole intrinsics; pixel `(col, row)` has its center at continuous coordinate `(col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CalibError::InvalidInput(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(CalibError::InvalidInput(
                "principal point is not finite".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CalibError::InvalidInput(format!(
                "image size must be positive ({}x{})",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        project_pinhole(p, self)
    }

    pub fn back_project(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Unit-depth ray through a pixel.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        self.back_project(pixel, 1.0)
    }

    pub fn contains(&self, pixel: &Vector2<f64>, margin: f64) -> bool {
        pixel.x >= margin
            && pixel.y >= margin
            && pixel.x <= self.width as f64 - 1.0 - margin
            && pixel.y <= self.height as f64 - 1.0 - margin
    }

    /// Horizontal field of view `2·atan(W / 2fx)` in degrees.
    pub fn horizontal_fov_deg(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan().to_degrees()
    }

    pub fn vertical_fov_deg(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.fy)).atan().to_degrees()
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// `π(p) = (fx·x/z + cx, fy·y/z + cy)`.
pub fn project_pinhole(p: &Vector3<f64>, k: &Intrinsics) -> Result<Vector2<f64>> {
    if !(p.z > 0.0) {
        return Err(CalibError::NonPositiveDepth { depth: p.z });
    }
    Ok(Vector2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// A 3D LiDAR point paired with the camera pixel it should project to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub lidar: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

impl PointPair {
    pub fn new(lidar: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self { lidar, pixel }
    }
}

/// Pixel residual `π(T·p) − pixel`.
pub fn reprojection_residual(
    pair: &PointPair,
    pose: &Pose,
    k: &Intrinsics,
) -> Result<Vector2<f64>> {
    let pc = pose.transform_point(&pair.lidar);
    Ok(project_pinhole(&pc, k)? - pair.pixel)
}

/// `ε = ‖π(T·p) − pixel‖₂` in pixels.
pub fn reprojection_error(pair: &PointPair, pose: &Pose, k: &Intrinsics) -> Result<f64> {
    reprojection_residual(pair, pose, k).map(|r| r.norm())
}

/// Intrinsic Z-Y-X Euler angles, `R = Rz(yaw)·Ry(pitch)·Rx(roll)`. Radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            yaw: yaw.to_radians(),
            pitch: pitch.to_radians(),
            roll: roll.to_radians(),
        }
    }

    pub fn to_degrees(&self) -> Vector3<f64> {
        Vector3::new(
            self.yaw.to_degrees(),
            self.pitch.to_degrees(),
            self.roll.to_degrees(),
        )
    }

    pub fn to_rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.pitch)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.roll)
    }

    pub fn from_rotation(rotation: &Rotation3<f64>) -> Self {
        let m = rotation.matrix();
        let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
        let pitch = sp.asin();
        if sp.abs() > 1.0 - 1e-12 {
            // Gimbal lock: only yaw ± roll is observable; put it all in yaw.
            let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
            return Self {
                yaw,
                pitch,
                roll: 0.0,
            };
        }
        Self {
            yaw: m[(1, 0)].atan2(m[(0, 0)]),
            pitch,
            roll: m[(2, 1)].atan2(m[(2, 2)]),
        }
    }
}

/// Calibration error of an estimate against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// Norm of the Euler-angle difference vector, degrees.
    pub rotation_deg: f64,
    /// Distance between the two camera centers, meters.
    pub translation_m: f64,
    /// Per-axis (yaw, pitch, roll) differences, degrees.
    pub euler_deg: [f64; 3],
    /// Per-axis camera-center differences, meters.
    pub center_m: [f64; 3],
}

fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// `e_r`, `e_t` between an estimated and a ground-truth extrinsic.
///
/// Euler angles are taken of the camera orientation in the LiDAR frame (`R⁻¹`),
/// the same frame in which `e_t` compares camera centers `−R⁻¹t`. For the usual
/// forward-looking mount `R` itself sits at pitch −90°, where Z-Y-X angles are
/// singular; `R⁻¹` sits at pitch 0.
pub fn error_metrics(estimated: &Pose, ground_truth: &Pose) -> ErrorMetrics {
    let est = EulerAngles::from_rotation(&estimated.rotation().inverse()).to_degrees();
    let gt = EulerAngles::from_rotation(&ground_truth.rotation().inverse()).to_degrees();
    let d = [
        wrap_degrees(est.x - gt.x),
        wrap_degrees(est.y - gt.y),
        wrap_degrees(est.z - gt.z),
    ];
    let dc = estimated.camera_center() - ground_truth.camera_center();
    ErrorMetrics {
        rotation_deg: (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt(),
        translation_m: dc.norm(),
        euler_deg: d,
        center_m: [dc.x, dc.y, dc.z],
    }
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn kitti_left() -> Pose {
        Pose::from_rounded(
            Matrix3::new(
                -2.5863e-04,
                -9.9997e-01,
                -7.5239e-03, //
                -6.8893e-03,
                7.5255e-03,
                -9.9995e-01, //
                9.9998e-01,
                -2.0678e-04,
                -6.8911e-03,
            ),
            Vector3::new(0.070478, -0.057913, -0.286353),
        )
        .unwrap()
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let p = project_pinhole(&Vector3::new(0.0, 0.0, 2.0), &k100()).unwrap();
        assert_eq!(p, Vector2::new(50.0, 50.0));
    }

    #[test]
    fn off_axis_projection() {
        let p = project_pinhole(&Vector3::new(1.0, 0.0, 2.0), &k100()).unwrap();
        assert_relative_eq!(p.x, 100.0);
        assert_relative_eq!(p.y, 50.0);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project_pinhole(&Vector3::new(0.0, 0.0, -1.0), &k100()).unwrap_err();
        assert!(matches!(err, CalibError::NonPositiveDepth { .. }));
        assert!(project_pinhole(&Vector3::new(0.0, 0.0, 0.0), &k100()).is_err());
    }

    #[test]
    fn reprojection_error_examples() {
        let k = k100();
        let id = Pose::identity();
        let pair = PointPair::new(Vector3::new(0.0, 0.0, 2.0), Vector2::new(50.0, 50.0));
        assert_eq!(reprojection_error(&pair, &id, &k).unwrap(), 0.0);

        let pair = PointPair::new(Vector3::new(0.0, 0.0, 2.0), Vector2::new(53.0, 54.0));
        assert_relative_eq!(
            reprojection_error(&pair, &id, &k).unwrap(),
            5.0,
            epsilon = 1e-12
        );

        let shifted = Pose::from_translation(Vector3::new(0.02, 0.0, 0.0));
        let pair = PointPair::new(Vector3::new(0.0, 0.0, 2.0), Vector2::new(50.0, 50.0));
        assert_relative_eq!(
            reprojection_error(&pair, &shifted, &k).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 10).is_err());
    }

    #[test]
    fn non_rotation_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
    }

    #[test]
    fn kitti_self_comparison_is_zero() {
        let p = kitti_left();
        let m = error_metrics(&p, &p);
        assert_eq!(m.rotation_deg, 0.0);
        assert_eq!(m.translation_m, 0.0);
    }

    #[test]
    fn pure_translation_error() {
        let est = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let gt = Pose::identity();
        let m = error_metrics(&est, &gt);
        assert_relative_eq!(m.translation_m, 1.0);
        assert_eq!(m.rotation_deg, 0.0);
    }

    #[test]
    fn single_axis_rotation_error() {
        let est = Pose::from_euler(EulerAngles::from_degrees(10.0, 0.0, 0.0), Vector3::zeros());
        let m = error_metrics(&est, &Pose::identity());
        assert_relative_eq!(m.rotation_deg, 10.0, epsilon = 1e-9);
        assert_eq!(m.translation_m, 0.0);
    }

    #[test]
    fn error_metrics_is_well_conditioned_at_forward_mount() {
        // A 0.001° perturbation of a forward-looking extrinsic stays ~0.001°.
        let gt = Pose::from_parts(forward_facing_rotation(), Vector3::new(0.1, -0.05, -0.3));
        let dr = Rotation3::from_axis_angle(&Vector3::y_axis(), 1e-3_f64.to_radians());
        let est = Pose::from_parts(dr * *gt.rotation(), *gt.translation());
        let m = error_metrics(&est, &gt);
        assert!(m.rotation_deg < 2e-3, "e_r = {}", m.rotation_deg);
    }

    #[test]
    fn gimbal_lock_decomposition_round_trips_rotation() {
        let e = EulerAngles::from_degrees(30.0, 90.0, 0.0);
        let r = e.to_rotation();
        let back = EulerAngles::from_rotation(&r).to_rotation();
        assert!((r.matrix() - back.matrix()).norm() < 1e-9);
    }

    #[test]
    fn retract_zero_is_identity() {
        let p = kitti_left();
        assert_eq!(p.retract(&Vector6::zeros()), p);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -180.0..180.0f64,
            -89.0..89.0f64,
            -180.0..180.0f64,
            prop::array::uniform3(-5.0..5.0f64),
        )
            .prop_map(|(y, p, r, t)| {
                Pose::from_euler(EulerAngles::from_degrees(y, p, r), Vector3::from(t))
            })
    }

    proptest! {
        #[test]
        fn rotation_stays_orthonormal(pose in arb_pose()) {
            let m = pose.rotation_matrix();
            prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(pose in arb_pose()) {
            let id = pose.compose(&pose.inverse());
            prop_assert!((id.rotation_matrix() - Matrix3::identity()).norm() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn self_comparison_is_exactly_zero(pose in arb_pose()) {
            let m = error_metrics(&pose, &pose);
            prop_assert_eq!(m.rotation_deg, 0.0);
            prop_assert_eq!(m.translation_m, 0.0);
        }

        #[test]
        fn translation_error_is_symmetric(a in arb_pose(), b in arb_pose()) {
            let ab = error_metrics(&a, &b).translation_m;
            let ba = error_metrics(&b, &a).translation_m;
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn projection_back_projection_round_trip(
            x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.1..50.0f64
        ) {
            let k = Intrinsics::new(721.5, 721.5, 609.6, 172.9, 1242, 375).unwrap();
            let p = Vector3::new(x, y, z);
            let uv = project_pinhole(&p, &k).unwrap();
            let back = k.back_project(&uv, z);
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn euler_round_trip(y in -179.0..179.0f64, p in -88.9..88.9f64, r in -179.0..179.0f64) {
            let e = EulerAngles::from_degrees(y, p, r);
            let back = EulerAngles::from_rotation(&e.to_rotation()).to_degrees();
            prop_assert!((back.x - y).abs() < 1e-6);
            prop_assert!((back.y - p).abs() < 1e-6);
            prop_assert!((back.z - r).abs() < 1e-6);
        }
    }
}
