//! Parametric scenes with known extrinsics: textured planes and boxes, a ray-cast
//! LiDAR, an analytically rendered grayscale camera image, exact face
//! silhouettes as camera masks, and ground-truth corner correspondences.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::dpcm::{Correspondence, CorrespondenceSet, Pathway};
use crate::error::{CalibError, Result};
use crate::geometry::{forward_facing_rotation, EulerAngles, Intrinsics, Pose};
use crate::masks::Mask;
use crate::polygon::Point2;
use crate::projection::ProjectionImage;
use crate::raster::Raster;

/// A face needs this many LiDAR returns to count as seen by the LiDAR.
pub const MIN_LIDAR_SUPPORT: usize = 20;
/// Silhouettes smaller than this many pixels are not emitted as masks.
pub const MIN_MASK_AREA: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Rectangle spanning its local Y (width) and Z (height) axes.
    Plane {
        center: [f64; 3],
        size: [f64; 2],
        /// Yaw, pitch, roll in degrees.
        rotation_deg: [f64; 3],
        intensity: f64,
    },
    Box {
        center: [f64; 3],
        size: [f64; 3],
        rotation_deg: [f64; 3],
        /// Faces in order -X, +X, -Y, +Y, -Z, +Z.
        intensities: [f64; 6],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanPattern {
    Raster {
        columns: usize,
        rows: usize,
    },
    /// Halton-sequence directions; any prefix covers the field of view evenly.
    NonRepetitive {
        samples: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LidarModel {
    Spinning {
        lines: usize,
        azimuth_resolution_deg: f64,
        min_elevation_deg: f64,
        max_elevation_deg: f64,
        max_range: f64,
    },
    SolidState {
        horizontal_fov_deg: f64,
        vertical_fov_deg: f64,
        pattern: ScanPattern,
        max_range: f64,
    },
}

impl LidarModel {
    /// A 64-line spinning LiDAR with KITTI-like elevation span.
    pub fn spinning(lines: usize) -> Self {
        LidarModel::Spinning {
            lines,
            azimuth_resolution_deg: 0.2,
            min_elevation_deg: -24.9,
            max_elevation_deg: 2.0,
            max_range: 80.0,
        }
    }

    pub fn solid_state(samples: usize) -> Self {
        LidarModel::SolidState {
            horizontal_fov_deg: 100.0,
            vertical_fov_deg: 70.0,
            pattern: ScanPattern::NonRepetitive { samples },
            max_range: 80.0,
        }
    }

    /// Unit ray directions in emission order, plus the maximum range.
    fn rays(&self) -> (Vec<Vector3<f64>>, f64) {
        let dir =
            |az: f64, el: f64| Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        match *self {
            LidarModel::Spinning {
                lines,
                azimuth_resolution_deg,
                min_elevation_deg,
                max_elevation_deg,
                max_range,
            } => {
                let steps = (360.0 / azimuth_resolution_deg).round().max(1.0) as usize;
                let span = max_elevation_deg - min_elevation_deg;
                let mut out = Vec::with_capacity(steps * lines);
                for j in 0..steps {
                    let az = (j as f64 * azimuth_resolution_deg).to_radians();
                    for i in 0..lines {
                        let el = min_elevation_deg + i as f64 * span / lines as f64;
                        out.push(dir(az, el.to_radians()));
                    }
                }
                (out, max_range)
            }
            LidarModel::SolidState {
                horizontal_fov_deg,
                vertical_fov_deg,
                pattern,
                max_range,
            } => {
                let (h, v) = (
                    horizontal_fov_deg.to_radians(),
                    vertical_fov_deg.to_radians(),
                );
                let at = |fu: f64, fv: f64| dir(-h / 2.0 + h * fu, -v / 2.0 + v * fv);
                let out = match pattern {
                    ScanPattern::Raster { columns, rows } => (0..rows)
                        .flat_map(|r| {
                            (0..columns).map(move |c| {
                                (
                                    (c as f64 + 0.5) / columns as f64,
                                    (r as f64 + 0.5) / rows as f64,
                                )
                            })
                        })
                        .map(|(fu, fv)| at(fu, fv))
                        .collect(),
                    ScanPattern::NonRepetitive { samples } => (1..=samples)
                        .map(|i| at(halton(i, 2), halton(i, 3)))
                        .collect(),
                };
                (out, max_range)
            }
        }
    }
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Gaussian noise on camera mask vertices, pixels.
    pub pixel_sigma: f64,
    /// Gaussian range noise on LiDAR returns, meters.
    pub point_sigma: f64,
    /// Fraction of mask vertices displaced by a 10 to 40 px outlier offset.
    pub outlier_rate: f64,
    /// Fraction of LiDAR returns dropped.
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub lidar: LidarModel,
    pub intrinsics: Intrinsics,
    pub true_extrinsic: Pose,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let bad = |m: String| Err(CalibError::InvalidInput(m));
        let in_unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        for (i, p) in self.primitives.iter().enumerate() {
            let (extents, intensities): (Vec<f64>, Vec<f64>) = match p {
                Primitive::Plane {
                    size, intensity, ..
                } => (size.to_vec(), vec![*intensity]),
                Primitive::Box {
                    size, intensities, ..
                } => (size.to_vec(), intensities.to_vec()),
            };
            if !extents.iter().all(|e| e.is_finite() && *e > 0.0) {
                return bad(format!("primitive {i} has a non-positive extent"));
            }
            if !intensities.iter().all(|v| in_unit(*v)) {
                return bad(format!("primitive {i} has an intensity outside [0, 1]"));
            }
        }
        let n = &self.noise;
        if !(in_unit(n.outlier_rate) && in_unit(n.dropout_rate)) {
            return bad("noise rates must lie in [0, 1]".into());
        }
        if !(n.pixel_sigma >= 0.0 && n.point_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text)
            .map_err(|e| CalibError::InvalidInput(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

/// A rectangular face `c0 c1 c2 c3` in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub id: usize,
    pub corners: [Vector3<f64>; 4],
    pub intensity: f64,
}

impl Face {
    pub fn center(&self) -> Vector3<f64> {
        self.corners.iter().sum::<Vector3<f64>>() / 4.0
    }

    /// Ray parameter of the hit `o + t·d`, if any.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let c0 = self.corners[0];
        let e1 = self.corners[1] - c0;
        let e2 = self.corners[3] - c0;
        let n = e1.cross(&e2);
        let denom = n.dot(d);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(c0 - o)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let q = o + d * t - c0;
        let u = q.dot(&e1) / e1.norm_squared();
        let v = q.dot(&e2) / e2.norm_squared();
        ((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)).then_some(t)
    }
}

/// Expands primitives into faces, numbered in declaration order.
pub fn faces(primitives: &[Primitive]) -> Vec<Face> {
    let mut out = Vec::new();
    for p in primitives {
        match p {
            Primitive::Plane {
                center,
                size,
                rotation_deg,
                intensity,
            } => {
                let r = rotation(rotation_deg);
                let c = Vector3::from(*center);
                let (w, h) = (size[0] / 2.0, size[1] / 2.0);
                let local = [(-w, -h), (w, -h), (w, h), (-w, h)];
                let corners = local.map(|(y, z)| c + r * Vector3::new(0.0, y, z));
                out.push(Face {
                    id: out.len(),
                    corners,
                    intensity: *intensity,
                });
            }
            Primitive::Box {
                center,
                size,
                rotation_deg,
                intensities,
            } => {
                let r = rotation(rotation_deg);
                let c = Vector3::from(*center);
                let half = Vector3::from(*size) / 2.0;
                for (k, intensity) in intensities.iter().enumerate() {
                    let axis = k / 2;
                    let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let local = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
                    let corners = local.map(|(sa, sb)| {
                        let mut v = Vector3::zeros();
                        v[axis] = sign * half[axis];
                        v[a] = sa * half[a];
                        v[b] = sb * half[b];
                        c + r * v
                    });
                    out.push(Face {
                        id: out.len(),
                        corners,
                        intensity: *intensity,
                    });
                }
            }
        }
    }
    out
}

fn rotation(deg: &[f64; 3]) -> nalgebra::Rotation3<f64> {
    EulerAngles::from_degrees(deg[0], deg[1], deg[2]).to_rotation()
}

/// Nearest face hit along `o + t·d`; ties go to the lower face id.
pub fn cast(faces: &[Face], o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, f) in faces.iter().enumerate() {
        if let Some(t) = f.intersect(o, d) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
    }
    best
}

/// Whether `face` is unoccluded from `eye`: rays to its center, edge midpoints
/// and slightly inset corners must not hit anything closer.
pub fn face_visible_from(faces: &[Face], face: &Face, eye: &Vector3<f64>) -> bool {
    let c = face.center();
    let mut samples = vec![c];
    for i in 0..4 {
        let a = face.corners[i];
        let b = face.corners[(i + 1) % 4];
        samples.push(a + (c - a) * 0.03);
        samples.push((a + b) / 2.0 + (c - (a + b) / 2.0) * 0.03);
    }
    samples.iter().all(|s| {
        let d = s - eye;
        if d.norm() < 1e-9 {
            return false;
        }
        match cast(faces, eye, &d) {
            Some((t, _)) => t >= 1.0 - 1e-7,
            None => true,
        }
    })
}

/// Projects a face into a camera; `None` unless every corner lands inside the image.
fn face_polygon(face: &Face, pose: &Pose, k: &Intrinsics) -> Option<Vec<Point2>> {
    let mut poly = Vec::with_capacity(4);
    for c in &face.corners {
        let pc = pose.transform_point(c);
        if pc.z < 0.05 {
            return None;
        }
        let uv = k.project(&pc).ok()?;
        if !k.contains(&uv, 1.0) {
            return None;
        }
        poly.push(uv);
    }
    Some(poly)
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub faces: Vec<Face>,
    pub cloud: PointCloud,
    /// Face hit by each cloud point.
    pub point_faces: Vec<usize>,
    /// Grayscale camera image in `[0, 1]`, zero where nothing is hit.
    pub image: Raster,
    /// Camera-frame depth in meters, zero where nothing is hit.
    pub depth: Raster,
    /// Silhouettes matched to the intensity image.
    pub masks: Vec<Mask>,
    /// Silhouettes matched to the depth image, with independent noise.
    pub depth_masks: Vec<Mask>,
    /// Noise-free face corners seen by both sensors.
    pub ground_truth: CorrespondenceSet,
    pub extrinsic: Pose,
}

impl SyntheticScene {
    pub fn intrinsics(&self) -> &Intrinsics {
        &self.spec.intrinsics
    }

    /// Exact face silhouettes in a rendered view: faces fully inside the view,
    /// unoccluded from its center and backed by at least 30 rendered points.
    pub fn oracle_masks(&self, view: &ProjectionImage) -> Vec<Mask> {
        let cam = view.camera();
        let eye = cam.pose.camera_center();
        let mut support = vec![0usize; self.faces.len()];
        for y in 0..view.height() {
            for x in 0..view.width() {
                if let Some(i) = view.source(x, y) {
                    support[self.point_faces[i]] += 1;
                }
            }
        }
        self.faces
            .iter()
            .filter(|f| support[f.id] >= 30)
            .filter_map(|f| {
                let poly = face_polygon(f, &cam.pose, &cam.intrinsics)?;
                if !face_visible_from(&self.faces, f, &eye) {
                    return None;
                }
                Mask::from_polygon(f.id, poly)
                    .ok()
                    .filter(|m| m.area >= MIN_MASK_AREA)
            })
            .collect()
    }
}

/// Ray-casts the LiDAR and camera, builds silhouettes, applies noise.
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let faces = faces(&spec.primitives);
    let k = spec.intrinsics;
    let pose = spec.true_extrinsic;

    // LiDAR.
    let (rays, max_range) = spec.lidar.rays();
    let origin = Vector3::zeros();
    let hits: Vec<Option<(f64, usize)>> = rays
        .par_iter()
        .map(|d| cast(&faces, &origin, d).filter(|(t, _)| *t <= max_range))
        .collect();
    let mut rng = stream(spec.seed, 0);
    let range_noise = Normal::new(0.0, spec.noise.point_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut points = Vec::new();
    let mut intensities = Vec::new();
    let mut point_faces = Vec::new();
    let mut lidar_support = vec![0usize; faces.len()];
    for (d, hit) in rays.iter().zip(&hits) {
        let Some((t, f)) = *hit else { continue };
        lidar_support[f] += 1;
        if spec.noise.dropout_rate > 0.0 && rng.random::<f64>() < spec.noise.dropout_rate {
            continue;
        }
        let range = if spec.noise.point_sigma > 0.0 {
            t + range_noise.sample(&mut rng)
        } else {
            t
        };
        points.push(d * range);
        intensities.push(faces[f].intensity);
        point_faces.push(f);
    }
    let cloud = PointCloud::new(points, intensities)?;

    // Camera image and depth.
    let (w, h) = (k.width as usize, k.height as usize);
    let eye = pose.camera_center();
    let r_inv = pose.rotation().inverse();
    let rows: Vec<Vec<(f64, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let ray = r_inv * k.ray(&Vector2::new(x as f64, y as f64));
                    match cast(&faces, &eye, &ray) {
                        Some((t, f)) => (faces[f].intensity, t),
                        None => (0.0, 0.0),
                    }
                })
                .collect()
        })
        .collect();
    let flat: Vec<(f64, f64)> = rows.into_iter().flatten().collect();
    let image = Raster::from_vec(w, h, flat.iter().map(|v| v.0).collect())?;
    let depth = Raster::from_vec(w, h, flat.iter().map(|v| v.1).collect())?;

    // Silhouettes and ground truth.
    let mut exact = Vec::new();
    let mut ground_truth = CorrespondenceSet::new(Pathway::Textural, 0);
    for f in &faces {
        let Some(poly) = face_polygon(f, &pose, &k) else {
            continue;
        };
        if !face_visible_from(&faces, f, &eye) {
            continue;
        }
        let mask = Mask::from_polygon(f.id, poly.clone())?;
        if mask.area < MIN_MASK_AREA {
            continue;
        }
        exact.push(mask);
        if lidar_support[f.id] < MIN_LIDAR_SUPPORT || !face_visible_from(&faces, f, &origin) {
            continue;
        }
        for (c, uv) in f.corners.iter().zip(&poly) {
            if ground_truth
                .pairs
                .iter()
                .any(|p| (p.lidar - c).norm() < 1e-9)
            {
                continue;
            }
            ground_truth.pairs.push(Correspondence {
                lidar: *c,
                pixel: *uv,
                cost: 0.0,
                depth_norm: 0.0,
            });
        }
    }
    if ground_truth.is_empty() {
        return Err(CalibError::NoVisibleGeometry);
    }
    let masks = perturb_masks(&exact, &spec.noise, &mut stream(spec.seed, 1))?;
    let depth_masks = perturb_masks(&exact, &spec.noise, &mut stream(spec.seed, 2))?;

    Ok(SyntheticScene {
        spec: spec.clone(),
        faces,
        cloud,
        point_faces,
        image,
        depth,
        masks,
        depth_masks,
        ground_truth,
        extrinsic: pose,
    })
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn perturb_masks(masks: &[Mask], noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Mask>> {
    if noise.pixel_sigma == 0.0 && noise.outlier_rate == 0.0 {
        return Ok(masks.to_vec());
    }
    let gauss = Normal::new(0.0, noise.pixel_sigma.max(f64::MIN_POSITIVE)).unwrap();
    masks
        .iter()
        .map(|m| {
            let poly = m
                .polygon
                .iter()
                .map(|p| {
                    let mut q = *p;
                    if noise.pixel_sigma > 0.0 {
                        q += Vector2::new(gauss.sample(rng), gauss.sample(rng));
                    }
                    if noise.outlier_rate > 0.0 && rng.random::<f64>() < noise.outlier_rate {
                        let angle = rng.random_range(0.0..std::f64::consts::TAU);
                        let len = rng.random_range(10.0..40.0);
                        q += Vector2::new(angle.cos(), angle.sin()) * len;
                    }
                    q
                })
                .collect();
            Mask::from_polygon(m.id, poly)
        })
        .collect()
}

/// Cumulative density splits: the cloud cut into `parts` consecutive segments
/// in recorded order, returned as the unions of the first 1, 2, … `parts` of them.
pub fn density_split(cloud: &PointCloud, parts: usize) -> Vec<PointCloud> {
    let parts = parts.max(1);
    (1..=parts)
        .map(|i| cloud.slice(0..cloud.len() * i / parts))
        .collect()
}

/// Camera intrinsics used by the generated scenes: 640×480, 500 px focal length.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 500.0,
        fy: 500.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
    }
}

/// A camera mounted near the LiDAR: up to `max_deg` of yaw/pitch/roll away from
/// looking down +X, center within `max_offset` meters per axis.
pub fn random_extrinsic(seed: u64, max_deg: f64, max_offset: f64) -> Pose {
    let mut rng = stream(seed, 7);
    let mut u = |s: f64| rng.random_range(-1.0..=1.0) * s;
    let tilt = EulerAngles::from_degrees(u(max_deg), u(max_deg), u(max_deg)).to_rotation();
    let rotation = forward_facing_rotation() * tilt;
    let center = Vector3::new(u(max_offset), u(max_offset), u(max_offset));
    Pose::looking_from(rotation, center)
}

/// Random boxes and panels spread in front of the sensors, 4 to 12 m away.
pub fn random_primitives(seed: u64, count: usize) -> Vec<Primitive> {
    let mut rng = stream(seed, 8);
    (0..count)
        .map(|i| {
            // Spread objects over distinct azimuth sectors to limit occlusion.
            let sector = 50.0 / count as f64;
            let az = (-25.0 + sector * (i as f64 + rng.random_range(0.2..0.8))).to_radians();
            let range = rng.random_range(4.0..12.0);
            let el = rng.random_range(-8.0f64..6.0).to_radians();
            let center = [range * az.cos(), range * az.sin(), range * el.tan()];
            let yaw = rng.random_range(-40.0..40.0);
            if rng.random::<f64>() < 0.6 {
                let size = [
                    rng.random_range(0.7..1.6),
                    rng.random_range(0.7..1.6),
                    rng.random_range(0.7..1.6),
                ];
                let intensities = std::array::from_fn(|_| rng.random_range(0.15..0.95));
                Primitive::Box {
                    center,
                    size,
                    rotation_deg: [yaw, 0.0, 0.0],
                    intensities,
                }
            } else {
                let roll = rng.random_range(-20.0..20.0);
                Primitive::Plane {
                    center,
                    size: [rng.random_range(0.8..2.2), rng.random_range(0.6..1.8)],
                    rotation_deg: [yaw, 0.0, roll],
                    intensity: rng.random_range(0.15..0.95),
                }
            }
        })
        .collect()
}

/// A random scene spec; primitives depend on `seed`, the extrinsic is given.
pub fn random_scene(
    seed: u64,
    primitives: usize,
    extrinsic: Pose,
    lidar: LidarModel,
    noise: NoiseSpec,
) -> SceneSpec {
    SceneSpec {
        primitives: random_primitives(seed, primitives),
        lidar,
        intrinsics: default_intrinsics(),
        true_extrinsic: extrinsic,
        noise,
        seed,
    }
}
