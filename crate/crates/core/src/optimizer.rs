//! Pose estimation: the Gaussian depth-normalized loss, PnP, robust
//! hypothesis-and-refine per scene, and joint refinement across scenes.

use nalgebra::{
    DMatrix, Matrix2x3, Matrix3, Matrix3x6, Matrix6, Rotation3, Vector2, Vector3, Vector6, SVD,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpcm::{Correspondence, CorrespondenceSet};
use crate::error::{CalibError, Result};
use crate::geometry::{skew, Intrinsics, PointPair, Pose};

/// Minimal number of correspondences for a pose.
pub const MIN_PNP_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLossParams {
    /// Image height, pixels.
    pub height: f64,
    /// Mean normalized depth `d̄'` of the correspondences.
    pub mean_norm_depth: f64,
    /// Mean camera-frame depth `d̄_g`, meters.
    pub mean_depth: f64,
}

impl RobustLossParams {
    fn kernel(&self, d_norm: f64) -> f64 {
        let d = d_norm - self.mean_norm_depth;
        (-(d * d) / (2.0 * self.mean_depth * self.mean_depth)).exp()
    }
}

/// `G = ε·(e − K)/(H + ε)` with `K = exp(−(d' − d̄')²/(2·d̄_g²))`.
pub fn g_loss(eps: f64, d_norm: f64, params: &RobustLossParams) -> f64 {
    let a = std::f64::consts::E - params.kernel(d_norm);
    if eps.is_infinite() {
        return a;
    }
    eps * a / (params.height + eps)
}

/// 2×6 Jacobian of the projected pixel with respect to a left update `[ω; v]`,
/// evaluated at the camera-frame point `pc`.
pub fn projection_jacobian(pc: &Vector3<f64>, k: &Intrinsics) -> nalgebra::Matrix2x6<f64> {
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let jp = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / (z * z),
        0.0,
        k.fy / z,
        -k.fy * y / (z * z),
    );
    let mut dp = Matrix3x6::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(pc)));
    dp.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Matrix3::identity());
    jp * dp
}

fn project(pc: &Vector3<f64>, k: &Intrinsics) -> Vector2<f64> {
    Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tol: 1e-10,
            step_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOutcome {
    pub pose: Pose,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Gauss-Newton on SE(3) with left updates.
///
/// `linearize` returns the (weighted) normal matrix and gradient at a pose;
/// `objective` is the true loss used to accept or reject steps, so accepted
/// iterations never increase it.
fn levenberg_marquardt(
    start: Pose,
    cfg: &LmConfig,
    objective: impl Fn(&Pose) -> f64,
    linearize: impl Fn(&Pose) -> Option<(Matrix6<f64>, Vector6<f64>)>,
) -> LmOutcome {
    let mut pose = start;
    let mut cost = objective(&pose);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut lin = linearize(&pose);
    while iterations < cfg.max_iterations {
        let Some((a, g)) = lin else {
            break;
        };
        if g.amax() < cfg.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let diag = a
            .diagonal()
            .map(|d| d.max(1e-12 * a.diagonal().amax()).max(1e-300));
        let mut accepted = false;
        while mu < 1e16 {
            let mut damped = a;
            for i in 0..6 {
                damped[(i, i)] += mu * diag[i];
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = -chol.solve(&g);
            let candidate = pose.retract(&step);
            let new_cost = objective(&candidate);
            if new_cost.is_finite() && new_cost <= cost {
                let decrease = cost - new_cost;
                pose = candidate;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                let small_step = step.norm() < cfg.step_tol * (1.0 + pose.translation().norm());
                let small_decrease = decrease <= 1e-15 * cost.max(f64::MIN_POSITIVE);
                cost = new_cost;
                if small_step || small_decrease {
                    converged = true;
                }
                break;
            }
            if step.norm() < cfg.step_tol * 1e-3 * (1.0 + pose.translation().norm()) {
                // Steps are too small to change the loss: numerically at the minimum.
                converged = true;
                break;
            }
            mu *= 4.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // Damping saturated without descent.
            converged = true;
            break;
        }
        lin = linearize(&pose);
    }
    LmOutcome {
        pose,
        cost,
        iterations,
        converged,
    }
}

fn squared_reprojection(pose: &Pose, pairs: &[PointPair], k: &Intrinsics) -> f64 {
    let mut s = 0.0;
    for p in pairs {
        let pc = pose.transform_point(&p.lidar);
        if pc.z <= 1e-9 {
            return f64::INFINITY;
        }
        s += (project(&pc, k) - p.pixel).norm_squared();
    }
    0.5 * s
}

fn squared_normal_equations(
    pose: &Pose,
    pairs: &[PointPair],
    k: &Intrinsics,
) -> Option<(Matrix6<f64>, Vector6<f64>)> {
    let mut a = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for p in pairs {
        let pc = pose.transform_point(&p.lidar);
        if pc.z <= 1e-9 {
            return None;
        }
        let j = projection_jacobian(&pc, k);
        let r = project(&pc, k) - p.pixel;
        a += j.transpose() * j;
        g += j.transpose() * r;
    }
    Some((a, g))
}

/// Least-squares reprojection refinement.
pub fn refine_least_squares(
    start: Pose,
    pairs: &[PointPair],
    k: &Intrinsics,
    cfg: &LmConfig,
) -> LmOutcome {
    levenberg_marquardt(
        start,
        cfg,
        |p| squared_reprojection(p, pairs, k),
        |p| squared_normal_equations(p, pairs, k),
    )
}

fn normalized(p: &PointPair, k: &Intrinsics) -> Vector2<f64> {
    Vector2::new((p.pixel.x - k.cx) / k.fx, (p.pixel.y - k.cy) / k.fy)
}

/// Centroid and principal directions (columns, descending spread) with singular values.
fn principal_frame(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>, Vector3<f64>) {
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let svd = SVD::new(cov, true, false);
    let u = svd.u.unwrap();
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let basis =
        Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    (
        c,
        basis,
        Vector3::new(s[order[0]], s[order[1]], s[order[2]]).map(|v| v.max(0.0).sqrt()),
    )
}

fn nearest_rotation(m: &Matrix3<f64>) -> Option<Rotation3<f64>> {
    let svd = SVD::new(*m, true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Some(Rotation3::from_matrix_unchecked(u * d * vt))
}

/// Direct linear transform on normalized image coordinates (≥ 6 non-coplanar points).
fn dlt_init(pairs: &[PointPair], k: &Intrinsics) -> Option<Pose> {
    let pts: Vec<Vector3<f64>> = pairs.iter().map(|p| p.lidar).collect();
    let c = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / pts.len() as f64;
    let s = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / pts.len() as f64;
    if s <= 0.0 {
        return None;
    }
    let n = pairs.len();
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, p) in pairs.iter().enumerate() {
        let x = (p.lidar - c) / s;
        let uv = normalized(p, k);
        let xh = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -uv.x * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -uv.y * xh[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (imin, _) = eig.eigenvalues.argmin();
    let v = eig.eigenvectors.column(imin);
    let mut p = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let mut p4 = Vector3::new(v[3], v[7], v[11]);
    // Undo the normalization: X' = (X − c)/s.
    let m = p / s;
    p4 -= m * c;
    p = m;
    // Points must lie in front of the camera.
    let front = pairs
        .iter()
        .filter(|q| (p.row(2) * q.lidar)[0] + p4.z > 0.0)
        .count();
    if 2 * front < n {
        p = -p;
        p4 = -p4;
    }
    let r = nearest_rotation(&p)?;
    let svd = SVD::new(p, false, false);
    let lambda = svd.singular_values.mean();
    if !(lambda > 0.0) {
        return None;
    }
    Some(Pose::from_parts(r, p4 / lambda))
}

/// Plane-induced homography, exact for coplanar points and a starting guess otherwise.
fn homography_init(pairs: &[PointPair], k: &Intrinsics) -> Option<Pose> {
    let pts: Vec<Vector3<f64>> = pairs.iter().map(|p| p.lidar).collect();
    let (c, basis, _) = principal_frame(&pts);
    let (e1, e2) = (basis.column(0).into_owned(), basis.column(1).into_owned());
    let normal = e1.cross(&e2);
    let plane: Vec<Vector2<f64>> = pts
        .iter()
        .map(|p| Vector2::new((p - c).dot(&e1), (p - c).dot(&e2)))
        .collect();
    let scale = plane.iter().map(|q| q.norm()).sum::<f64>() / plane.len() as f64;
    if scale <= 0.0 {
        return None;
    }
    let n = pairs.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, p) in pairs.iter().enumerate() {
        let q = plane[i] / scale;
        let uv = normalized(p, k);
        let xh = [q.x, q.y, 1.0];
        for j in 0..3 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 6 + j)] = -uv.x * xh[j];
            a[(2 * i + 1, 3 + j)] = xh[j];
            a[(2 * i + 1, 6 + j)] = -uv.y * xh[j];
        }
    }
    let eig = (a.transpose() * &a).symmetric_eigen();
    let (imin, _) = eig.eigenvalues.argmin();
    let v = eig.eigenvectors.column(imin);
    let mut h = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    // Undo the in-plane scaling on the first two columns.
    for r in 0..3 {
        h[(r, 0)] /= scale;
        h[(r, 1)] /= scale;
    }
    let norm = 0.5 * (h.column(0).norm() + h.column(1).norm());
    if !(norm > 0.0) {
        return None;
    }
    h /= norm;
    if h[(2, 2)] < 0.0 {
        h = -h;
    }
    let r1 = h.column(0).into_owned();
    let r2 = h.column(1).into_owned();
    let q = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]))?;
    let b = Matrix3::from_columns(&[e1, e2, normal]);
    let rot = Rotation3::from_matrix_unchecked(q.matrix() * b.transpose());
    let t_plane = h.column(2).into_owned();
    Some(Pose::from_parts(rot, t_plane - rot * c))
}

fn quartic_real_roots(c: [f64; 5]) -> Vec<f64> {
    // c[0]·x⁴ + c[1]·x³ + c[2]·x² + c[3]·x + c[4]
    if c[0].abs() < 1e-14 * c.iter().fold(0.0f64, |m, v| m.max(v.abs())) {
        return Vec::new();
    }
    let mut comp = nalgebra::Matrix4::zeros();
    for i in 0..4 {
        comp[(0, i)] = -c[i + 1] / c[0];
    }
    for i in 1..4 {
        comp[(i, i - 1)] = 1.0;
    }
    let eval = |x: f64| (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
    let deriv = |x: f64| ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3];
    comp.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..5 {
                let d = deriv(x);
                if d.abs() < 1e-300 {
                    break;
                }
                x -= eval(x) / d;
            }
            x
        })
        .collect()
}

/// Rigid transform mapping `from` onto `to` in the least-squares sense.
fn absolute_orientation(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Option<Pose> {
    let n = from.len() as f64;
    let cf = from.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let ct = to.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (f, t) in from.iter().zip(to) {
        h += (t - ct) * (f - cf).transpose();
    }
    let r = nearest_rotation(&h)?;
    Some(Pose::from_parts(r, ct - r * cf))
}

/// Grunert's three-point solutions from the first three pairs.
fn p3p_candidates(pairs: &[PointPair], k: &Intrinsics) -> Vec<Pose> {
    let world = [pairs[0].lidar, pairs[1].lidar, pairs[2].lidar];
    let rays: Vec<Vector3<f64>> = pairs[..3]
        .iter()
        .map(|p| {
            let n = normalized(p, k);
            Vector3::new(n.x, n.y, 1.0).normalize()
        })
        .collect();
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if b2 <= 0.0 {
        return Vec::new();
    }
    let ca = rays[1].dot(&rays[2]);
    let cb = rays[0].dot(&rays[2]);
    let cg = rays[0].dot(&rays[1]);
    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let bmc = (b2 - c2) / b2;
    let bma = (b2 - a2) / b2;
    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
        4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca
            - 4.0 * apc * ca * cb * cg
            + 2.0 * bma * cg * cg),
        4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg,
    ];
    let mut out = Vec::new();
    for v in quartic_real_roots(coeffs) {
        let denom = 2.0 * (cg - v * ca);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom;
        let q = 1.0 + u * u - 2.0 * u * cg;
        if q <= 0.0 {
            continue;
        }
        let s1 = (c2 / q).sqrt();
        let (s2, s3) = (u * s1, v * s1);
        if s2 <= 0.0 || s3 <= 0.0 {
            continue;
        }
        let cam = [rays[0] * s1, rays[1] * s2, rays[2] * s3];
        out.extend(absolute_orientation(&world, &cam));
    }
    out
}

/// Pose minimizing the squared reprojection error of `pairs`.
///
/// Non-coplanar sets of six or more points start from a DLT; coplanar or small
/// sets start from a plane homography. Near-planar sets try both starts.
pub fn solve_pnp(pairs: &[PointPair], k: &Intrinsics) -> Result<Pose> {
    let outcome = solve_pnp_detailed(
        pairs,
        k,
        &LmConfig {
            max_iterations: 200,
            ..Default::default()
        },
    )?;
    if !outcome.converged {
        return Err(CalibError::NonConvergence {
            iterations: outcome.iterations,
        });
    }
    Ok(outcome.pose)
}

pub fn solve_pnp_detailed(
    pairs: &[PointPair],
    k: &Intrinsics,
    cfg: &LmConfig,
) -> Result<LmOutcome> {
    if pairs.len() < MIN_PNP_POINTS {
        return Err(CalibError::InsufficientCorrespondences {
            needed: MIN_PNP_POINTS,
            got: pairs.len(),
        });
    }
    let pts: Vec<Vector3<f64>> = pairs.iter().map(|p| p.lidar).collect();
    let (_, _, spread) = principal_frame(&pts);
    if spread[0] <= 0.0 || spread[1] < 1e-6 * spread[0] {
        return Err(CalibError::DegenerateConfiguration(
            "points are collinear".into(),
        ));
    }
    let flatness = spread[2] / spread[0];
    let mut starts = Vec::new();
    if pairs.len() >= 6 && flatness > 0.01 {
        starts.extend(dlt_init(pairs, k));
    }
    if flatness < 0.2 || pairs.len() < 6 {
        starts.extend(homography_init(pairs, k));
    }
    if pairs.len() < 6 {
        starts.extend(p3p_candidates(pairs, k));
    }
    let best = starts
        .into_iter()
        .filter(Pose::is_finite)
        .map(|s| refine_least_squares(s, pairs, k, cfg))
        .filter(|o| o.cost.is_finite())
        .min_by(|a, b| a.cost.total_cmp(&b.cost));
    best.ok_or_else(|| {
        CalibError::DegenerateConfiguration(
            "no initialization placed the points in front of the camera".into(),
        )
    })
}

/// Loss terms of one scene: its correspondences and the image height.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub pairs: &'a [Correspondence],
    pub height: f64,
    pub mean_norm_depth: f64,
}

impl<'a> LossContext<'a> {
    pub fn new(pairs: &'a [Correspondence], height: f64) -> Self {
        let mean_norm_depth = if pairs.is_empty() {
            0.0
        } else {
            pairs.iter().map(|p| p.depth_norm).sum::<f64>() / pairs.len() as f64
        };
        Self {
            pairs,
            height,
            mean_norm_depth,
        }
    }

    fn params(&self, pose: &Pose) -> RobustLossParams {
        let depths: Vec<f64> = self
            .pairs
            .iter()
            .map(|p| pose.transform_point(&p.lidar).z)
            .filter(|z| *z > 0.0)
            .collect();
        let mean_depth = if depths.is_empty() {
            1.0
        } else {
            depths.iter().sum::<f64>() / depths.len() as f64
        };
        RobustLossParams {
            height: self.height,
            mean_norm_depth: self.mean_norm_depth,
            mean_depth,
        }
    }

    /// `(Σ G, number of points behind the camera)`; a point behind the camera scores `e`.
    pub fn evaluate(&self, pose: &Pose, k: &Intrinsics) -> (f64, usize) {
        let params = self.params(pose);
        let mut total = 0.0;
        let mut behind = 0;
        for p in self.pairs {
            let pc = pose.transform_point(&p.lidar);
            if pc.z <= 0.0 {
                behind += 1;
                total += std::f64::consts::E;
                continue;
            }
            total += g_loss((project(&pc, k) - p.pixel).norm(), p.depth_norm, &params);
        }
        (total, behind)
    }

    pub fn residuals(&self, pose: &Pose, k: &Intrinsics) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|p| {
                let pc = pose.transform_point(&p.lidar);
                if pc.z <= 0.0 {
                    f64::INFINITY
                } else {
                    (project(&pc, k) - p.pixel).norm()
                }
            })
            .collect()
    }

    /// Σ G over the smoothed residuals `ε̃ = √(ε² + δ²) − δ`; this is the loss the
    /// refinement descends.
    pub fn evaluate_smoothed(&self, pose: &Pose, k: &Intrinsics) -> f64 {
        let params = self.params(pose);
        let mut total = 0.0;
        for p in self.pairs {
            let pc = pose.transform_point(&p.lidar);
            if pc.z <= 0.0 {
                total += std::f64::consts::E;
                continue;
            }
            let eps = (project(&pc, k) - p.pixel).norm();
            total += g_loss(smooth(eps), p.depth_norm, &params);
        }
        total
    }

    /// Newton system of the smoothed loss in the squared-residual form `ρ(‖r‖²)`:
    /// `Σ 2ρ'·JᵀJ + 4ρ''·(Jᵀr)(Jᵀr)ᵀ` and gradient `Σ 2ρ'·Jᵀr`.
    fn accumulate(&self, pose: &Pose, k: &Intrinsics, a: &mut Matrix6<f64>, g: &mut Vector6<f64>) {
        let params = self.params(pose);
        let h = params.height;
        for p in self.pairs {
            let pc = pose.transform_point(&p.lidar);
            if pc.z <= 1e-9 {
                continue;
            }
            let r = project(&pc, k) - p.pixel;
            let q = (r.norm_squared() + SMOOTHING_PX * SMOOTHING_PX).sqrt();
            let eps = q - SMOOTHING_PX;
            let coef = std::f64::consts::E - params.kernel(p.depth_norm);
            let d1 = coef * h / ((h + eps) * (h + eps));
            let d2 = -2.0 * coef * h / ((h + eps) * (h + eps) * (h + eps));
            let w = d1 / q;
            let rho2 = d2 / (4.0 * q * q) - d1 / (4.0 * q * q * q);
            let j = projection_jacobian(&pc, k);
            let jtr = j.transpose() * r;
            *a += j.transpose() * j * w + jtr * jtr.transpose() * (4.0 * rho2);
            *g += jtr * w;
        }
    }
}

/// Width of the pseudo-Huber smoothing applied to residuals during refinement, pixels.
/// `G` has a cone at `ε = 0`; without smoothing, descent stalls at kinks.
pub const SMOOTHING_PX: f64 = 0.5;

fn smooth(eps: f64) -> f64 {
    (eps * eps + SMOOTHING_PX * SMOOTHING_PX).sqrt() - SMOOTHING_PX
}

/// Minimizes the summed (smoothed) G-loss over several scenes from `start`.
pub fn refine_g_loss(
    start: Pose,
    scenes: &[LossContext],
    k: &Intrinsics,
    cfg: &LmConfig,
) -> LmOutcome {
    levenberg_marquardt(
        start,
        cfg,
        |p| scenes.iter().map(|s| s.evaluate_smoothed(p, k)).sum(),
        |p| {
            let mut a = Matrix6::zeros();
            let mut g = Vector6::zeros();
            for s in scenes {
                s.accumulate(p, k, &mut a, &mut g);
            }
            Some((a, g))
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub pose: Pose,
    /// Indices into the scene's pooled correspondences used to solve this pose.
    pub support: Vec<usize>,
    /// Σ G over every correspondence of the scene.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneBundle {
    pub scene_index: usize,
    pub correspondences: Vec<CorrespondenceSet>,
    /// Ranked best first.
    pub hypotheses: Vec<Hypothesis>,
    /// Selected reliable subset `S_t`, indices into [`SceneBundle::pooled`].
    pub subset: Vec<usize>,
}

impl SceneBundle {
    pub fn new(scene_index: usize, correspondences: Vec<CorrespondenceSet>) -> Self {
        Self {
            scene_index,
            correspondences,
            ..Default::default()
        }
    }

    /// All correspondences across views and pathways, in set order.
    pub fn pooled(&self) -> Vec<Correspondence> {
        self.correspondences
            .iter()
            .flat_map(|s| s.pairs.iter().copied())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.correspondences.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub hypotheses: usize,
    pub subset_size: usize,
    pub inlier_px: f64,
    /// Replaces the image height in the loss.
    pub height_override: Option<f64>,
    pub q_max: usize,
    pub s_max: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            hypotheses: 200,
            subset_size: 6,
            inlier_px: 3.0,
            height_override: None,
            q_max: 2000,
            s_max: 5,
            max_iterations: 100,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn height(&self, k: &Intrinsics) -> f64 {
        self.height_override.unwrap_or(k.height as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSolution {
    pub best: Hypothesis,
    pub ranked: Vec<Hypothesis>,
    pub inliers: usize,
    /// Refinement of the best hypothesis stopped at the iteration cap.
    pub refine_capped: bool,
}

/// Hypothesis-and-test PnP over a scene's pooled correspondences.
///
/// Random subsets are drawn up front from a generator seeded with
/// `cfg.seed + scene_index`, solved in parallel and scored by Σ G over all
/// correspondences. The best pose is refined on its inliers. An `initial` pose,
/// when given, competes as an extra hypothesis.
pub fn multi_view_solve(
    scene: &SceneBundle,
    k: &Intrinsics,
    cfg: &SolveConfig,
    initial: Option<&Pose>,
) -> Result<SceneSolution> {
    let pooled = scene.pooled();
    let n = pooled.len();
    if n < MIN_PNP_POINTS {
        return Err(CalibError::InsufficientCorrespondences {
            needed: MIN_PNP_POINTS,
            got: n,
        });
    }
    let m = cfg.subset_size.clamp(MIN_PNP_POINTS, n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(scene.scene_index as u64));
    let mut subsets: Vec<Vec<usize>> = Vec::with_capacity(cfg.hypotheses);
    for _ in 0..cfg.hypotheses.max(1) {
        let mut s = rand::seq::index::sample(&mut rng, n, m).into_vec();
        s.sort_unstable();
        if !subsets.contains(&s) {
            subsets.push(s);
        }
    }
    let ctx = LossContext::new(&pooled, cfg.height(k));
    let lm = LmConfig {
        max_iterations: 200,
        ..Default::default()
    };
    let mut ranked: Vec<Hypothesis> = subsets
        .par_iter()
        .filter_map(|s| {
            let pairs: Vec<PointPair> = s.iter().map(|&i| pooled[i].pair()).collect();
            let outcome = solve_pnp_detailed(&pairs, k, &lm).ok()?;
            Some(Hypothesis {
                pose: outcome.pose,
                support: s.clone(),
                score: ctx.evaluate(&outcome.pose, k).0,
            })
        })
        .collect();
    if let Some(init) = initial {
        let res = ctx.residuals(init, k);
        ranked.push(Hypothesis {
            pose: *init,
            support: (0..n).filter(|&i| res[i] < cfg.inlier_px).collect(),
            score: ctx.evaluate(init, k).0,
        });
    }
    if ranked.is_empty() {
        return Err(CalibError::DegenerateConfiguration(
            "every sampled subset was degenerate".into(),
        ));
    }
    // Stable sort keeps sampling order on equal scores.
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut best = ranked[0].clone();
    let residuals = ctx.residuals(&best.pose, k);
    let inlier_idx: Vec<usize> = (0..n).filter(|&i| residuals[i] < cfg.inlier_px).collect();
    let mut refine_capped = false;
    if inlier_idx.len() >= MIN_PNP_POINTS {
        let inliers: Vec<Correspondence> = inlier_idx.iter().map(|&i| pooled[i]).collect();
        let inlier_ctx = LossContext {
            pairs: &inliers,
            height: ctx.height,
            mean_norm_depth: ctx.mean_norm_depth,
        };
        let out = refine_g_loss(
            best.pose,
            &[inlier_ctx],
            k,
            &LmConfig {
                max_iterations: cfg.max_iterations,
                ..Default::default()
            },
        );
        refine_capped = !out.converged;
        let score = ctx.evaluate(&out.pose, k).0;
        if score <= best.score {
            best.pose = out.pose;
            best.score = score;
        }
    }
    let residuals = ctx.residuals(&best.pose, k);
    let inliers = residuals.iter().filter(|r| **r < cfg.inlier_px).count();
    Ok(SceneSolution {
        best,
        ranked,
        inliers,
        refine_capped,
    })
}

/// `s_t = min(⌊Q_max·q_t/Σq⌋, s_max)`, at least 1 for scenes with correspondences.
pub fn subset_counts(sizes: &[usize], q_max: usize, s_max: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    sizes
        .iter()
        .map(|&q| {
            if q == 0 || total == 0 {
                return 0;
            }
            let s = (q_max as u128 * q as u128 / total as u128) as usize;
            s.min(s_max).max(1)
        })
        .collect()
}

/// Sets each scene's `subset` to the union of the supports of its top `s_t` hypotheses.
pub fn select_scene_subsets(scenes: &mut [SceneBundle], q_max: usize, s_max: usize) {
    let sizes: Vec<usize> = scenes.iter().map(|s| s.len()).collect();
    let counts = subset_counts(&sizes, q_max, s_max);
    for (scene, s_t) in scenes.iter_mut().zip(counts) {
        let mut subset: Vec<usize> = scene
            .hypotheses
            .iter()
            .take(s_t)
            .flat_map(|h| h.support.iter().copied())
            .collect();
        subset.sort_unstable();
        subset.dedup();
        scene.subset = subset;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiSceneResult {
    pub pose: Pose,
    pub loss: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `pose` is then the best iterate.
    pub converged: bool,
}

/// Joint G-loss refinement over every scene's selected subset.
pub fn multi_scene_solve(
    scenes: &[SceneBundle],
    k: &Intrinsics,
    init: &Pose,
    cfg: &SolveConfig,
) -> Result<MultiSceneResult> {
    let selected: Vec<Vec<Correspondence>> = scenes
        .iter()
        .map(|s| {
            let pooled = s.pooled();
            s.subset
                .iter()
                .filter_map(|&i| pooled.get(i).copied())
                .collect()
        })
        .collect();
    let total: usize = selected.iter().map(Vec::len).sum();
    if total < MIN_PNP_POINTS {
        return Err(CalibError::InsufficientCorrespondences {
            needed: MIN_PNP_POINTS,
            got: total,
        });
    }
    let height = cfg.height(k);
    let contexts: Vec<LossContext> = selected
        .iter()
        .map(|s| LossContext::new(s, height))
        .collect();
    let out = refine_g_loss(
        *init,
        &contexts,
        k,
        &LmConfig {
            max_iterations: cfg.max_iterations,
            ..Default::default()
        },
    );
    if !out.converged {
        log::warn!(
            "multi-scene refinement hit {} iterations; keeping the best iterate",
            out.iterations
        );
    }
    Ok(MultiSceneResult {
        pose: out.pose,
        loss: out.cost,
        iterations: out.iterations,
        converged: out.converged,
    })
}
