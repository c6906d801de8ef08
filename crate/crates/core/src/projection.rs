//! Rendering LiDAR intensity (LIP) and depth (LDP) images through virtual
//! pinhole cameras, LiDAR field-of-view estimation and depth normalization.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{CalibError, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::polygon::{self, Point2};
use crate::raster::Raster;

/// Depths closer than this are treated as equal; the lower point index wins.
pub const DEPTH_TIE_EPS: f64 = 1e-9;

const EMPTY: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Intensity,
    Depth,
}

impl Channel {
    pub fn name(&self) -> &'static str {
        match self {
            Channel::Intensity => "intensity",
            Channel::Depth => "depth",
        }
    }
}

/// A pinhole viewpoint in the LiDAR frame sharing the real camera's intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualCamera {
    pub intrinsics: Intrinsics,
    /// Maps LiDAR points into the virtual camera frame.
    pub pose: Pose,
    pub channel: Channel,
}

impl VirtualCamera {
    pub fn new(intrinsics: Intrinsics, pose: Pose, channel: Channel) -> Self {
        Self {
            intrinsics,
            pose,
            channel,
        }
    }

    /// Sub-pixel image position and depth of a LiDAR point, if it is in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let pc = self.pose.transform_point(p);
        self.intrinsics.project(&pc).ok().map(|uv| (uv, pc.z))
    }
}

/// A rendered LIP or LDP image with per-pixel provenance.
#[derive(Debug, Clone)]
pub struct ProjectionImage {
    camera: VirtualCamera,
    width: usize,
    height: usize,
    values: Vec<f64>,
    depth: Vec<f64>,
    source: Vec<u32>,
    depth_range: (f64, f64),
}

impl ProjectionImage {
    pub fn camera(&self) -> &VirtualCamera {
        &self.camera
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Intensity in `[0, 1]` or depth in meters; 0 marks an empty pixel.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn depth(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    /// Index of the cloud point that won this pixel.
    pub fn source(&self, x: usize, y: usize) -> Option<usize> {
        match self.source[y * self.width + x] {
            EMPTY => None,
            i => Some(i as usize),
        }
    }

    pub fn occupied(&self) -> usize {
        self.source.iter().filter(|s| **s != EMPTY).count()
    }

    /// Depth range `(d_min, d_max)` of the cloud points that landed in the image.
    pub fn depth_range(&self) -> (f64, f64) {
        self.depth_range
    }

    /// Normalized depth `(d − d_min)/(d_max − d_min)` in this view's range.
    pub fn normalized_depth(&self, d: f64) -> f64 {
        let (lo, hi) = self.depth_range;
        if hi > lo {
            ((d - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn values(&self) -> Raster {
        Raster::from_vec(self.width, self.height, self.values.clone()).expect("consistent size")
    }

    /// Texture image used for corner descriptors: intensity as rendered, depth
    /// normalized into `[0, 1]`.
    pub fn texture(&self) -> Raster {
        match self.camera.channel {
            Channel::Intensity => self.values(),
            Channel::Depth => {
                let data = self
                    .depth
                    .iter()
                    .map(|d| {
                        if *d > 0.0 {
                            self.normalized_depth(*d)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Raster::from_vec(self.width, self.height, data).expect("consistent size")
            }
        }
    }

    /// 3×3 fill of empty pixels from the nearest occupied neighbor. Filled pixels
    /// carry no provenance, so the result is a plain raster.
    pub fn dilated(&self, image: &Raster) -> Raster {
        let mut out = image.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.source[y * self.width + x] != EMPTY {
                    continue;
                }
                let mut best: Option<(f64, f64)> = None;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if !image.in_bounds(nx, ny) {
                            continue;
                        }
                        let idx = ny as usize * self.width + nx as usize;
                        if self.source[idx] == EMPTY {
                            continue;
                        }
                        let d = self.depth[idx];
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, image.get(nx as usize, ny as usize)));
                        }
                    }
                }
                if let Some((_, v)) = best {
                    out.set(x, y, v);
                }
            }
        }
        out
    }

    /// Traces an image location inside `region` back to a LiDAR-frame point.
    ///
    /// Cloud points whose exact projection falls inside `region` and within
    /// `radius_px` of `pixel` are fitted with a plane (in the camera frame); the
    /// viewing ray through `pixel` is intersected with it. When the support is too
    /// small or collinear the nearest supporting point is returned instead.
    pub fn trace_back(
        &self,
        cloud: &PointCloud,
        pixel: &Point2,
        region: &[Point2],
        radius_px: f64,
    ) -> Option<Vector3<f64>> {
        let r = radius_px.ceil() as i64;
        let (px, py) = (pixel.x.round() as i64, pixel.y.round() as i64);
        let mut support: Vec<(Vector3<f64>, f64)> = Vec::new();
        for y in (py - r)..=(py + r) {
            for x in (px - r)..=(px + r) {
                if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
                    continue;
                }
                let Some(i) = self.source(x as usize, y as usize) else {
                    continue;
                };
                let p = cloud.point(i);
                let Some((uv, _)) = self.camera.project(&p) else {
                    continue;
                };
                let dist = (uv - pixel).norm();
                if dist > radius_px || !polygon::contains_with_tolerance(region, &uv, 0.25) {
                    continue;
                }
                support.push((self.camera.pose.transform_point(&p), dist));
            }
        }
        if support.is_empty() {
            return None;
        }
        let nearest = support
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|s| s.0)
            .unwrap();
        let to_lidar = |pc: Vector3<f64>| self.camera.pose.inverse().transform_point(&pc);
        let pts: Vec<Vector3<f64>> = support.iter().map(|s| s.0).collect();
        let ray = self.camera.intrinsics.ray(pixel).normalize();
        match fit_plane(&pts) {
            Some((centroid, normal)) => {
                let denom = normal.dot(&ray);
                if denom.abs() < 1e-3 {
                    return Some(to_lidar(nearest));
                }
                let s = normal.dot(&centroid) / denom;
                if s <= 0.0 {
                    return Some(to_lidar(nearest));
                }
                Some(to_lidar(ray * s))
            }
            None => Some(to_lidar(nearest)),
        }
    }
}

/// Least-squares plane through `points` with one trimming pass.
/// Returns `(centroid, unit normal)`, or `None` for fewer than three points or a
/// collinear set.
pub fn fit_plane(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let fit = |pts: &[&Vector3<f64>]| -> Option<(Vector3<f64>, Vector3<f64>, f64)> {
        if pts.len() < 3 {
            return None;
        }
        let c = pts.iter().fold(Vector3::zeros(), |acc, p| acc + **p) / pts.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in pts {
            let d = **p - c;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (l0, l1, l2) = (
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        );
        if l2 <= 0.0 || l1 <= 1e-6 * l2 {
            return None;
        }
        Some((
            c,
            eig.eigenvectors.column(order[0]).into_owned(),
            l0.max(0.0),
        ))
    };
    let all: Vec<&Vector3<f64>> = points.iter().collect();
    let (c, n, _) = fit(&all)?;
    let residuals: Vec<f64> = points.iter().map(|p| (p - c).dot(&n).abs()).collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let cutoff = (3.0 * 1.4826 * median).max(0.02);
    let kept: Vec<&Vector3<f64>> = points
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| **r <= cutoff)
        .map(|(p, _)| p)
        .collect();
    if kept.len() == points.len() {
        return Some((c, n));
    }
    fit(&kept).map(|(c, n, _)| (c, n)).or(Some((c, n)))
}

/// Splats every cloud point with positive depth into its nearest pixel; the
/// nearest point wins each pixel.
pub fn render(cloud: &PointCloud, cam: &VirtualCamera) -> Result<ProjectionImage> {
    if cloud.is_empty() {
        return Err(CalibError::InvalidInput(
            "cannot render an empty cloud".into(),
        ));
    }
    let k = &cam.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);
    let mut depth = vec![0.0; w * h];
    let mut source = vec![EMPTY; w * h];
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, p) in cloud.points().iter().enumerate() {
        let Some((uv, z)) = cam.project(p) else {
            continue;
        };
        let (x, y) = (uv.x.round(), uv.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        range = (range.0.min(z), range.1.max(z));
        let idx = y as usize * w + x as usize;
        let current = source[idx];
        // Points are visited in index order, so on a tie the earlier (lower) index stays.
        if current == EMPTY || z < depth[idx] - DEPTH_TIE_EPS {
            depth[idx] = z;
            source[idx] = i as u32;
        }
    }
    if !range.0.is_finite() {
        return Err(CalibError::EmptyProjection);
    }
    let values = match cam.channel {
        Channel::Depth => depth.clone(),
        Channel::Intensity => source
            .iter()
            .map(|&s| {
                if s == EMPTY {
                    0.0
                } else {
                    cloud.intensity(s as usize)
                }
            })
            .collect(),
    };
    Ok(ProjectionImage {
        camera: *cam,
        width: w,
        height: h,
        values,
        depth,
        source,
        depth_range: range,
    })
}

/// Angular extent of a LiDAR cloud, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    pub horizontal: f64,
    pub vertical: f64,
}

/// Horizontal and vertical field of view of a cloud in its sensor frame.
///
/// Bearings `θ = atan2(y, x)` are binned into 1° bins; if every bin is hit the
/// horizontal extent is 360°, otherwise it is 360° minus the largest angular gap
/// between consecutive bearings, which handles clouds straddling the ±180° seam.
/// Elevation `φ = atan2(z, √(x²+y²))` uses a plain max − min.
pub fn estimate_fov(cloud: &PointCloud) -> Result<FieldOfView> {
    if cloud.len() < 2 {
        return Err(CalibError::DegenerateCloud(
            "need at least two points".into(),
        ));
    }
    let mut bearings = Vec::with_capacity(cloud.len());
    let (mut phi_min, mut phi_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in cloud.points() {
        if p.norm() == 0.0 {
            continue;
        }
        let phi = p.z.atan2(p.x.hypot(p.y)).to_degrees();
        phi_min = phi_min.min(phi);
        phi_max = phi_max.max(phi);
        if p.x != 0.0 || p.y != 0.0 {
            bearings.push(p.y.atan2(p.x).to_degrees());
        }
    }
    let vertical = if phi_max >= phi_min {
        phi_max - phi_min
    } else {
        0.0
    };
    let horizontal = horizontal_extent(&mut bearings);
    if horizontal <= 0.0 && vertical <= 0.0 {
        return Err(CalibError::DegenerateCloud(
            "all points share one bearing".into(),
        ));
    }
    Ok(FieldOfView {
        horizontal,
        vertical,
    })
}

fn horizontal_extent(bearings: &mut [f64]) -> f64 {
    if bearings.len() < 2 {
        return 0.0;
    }
    let mut bins = [false; 360];
    for b in bearings.iter() {
        let idx = ((b + 180.0).floor() as i64).rem_euclid(360) as usize;
        bins[idx] = true;
    }
    if bins.iter().all(|b| *b) {
        return 360.0;
    }
    bearings.sort_by(f64::total_cmp);
    let n = bearings.len();
    let mut max_gap = bearings[0] + 360.0 - bearings[n - 1];
    for w in bearings.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    (360.0 - max_gap).max(0.0)
}

/// `d' = (d − d_min)/(d_max − d_min)` over the given depths.
pub fn normalize_depth(depths: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = depths
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(*d), hi.max(*d))
        });
    if depths.is_empty() {
        return Ok(Vec::new());
    }
    if hi <= lo {
        return Err(CalibError::ConstantDepth { value: lo });
    }
    Ok(depths.iter().map(|d| (d - lo) / (hi - lo)).collect())
}

/// Depths of the cloud points in front of a camera pose.
pub fn camera_frame_depths(cloud: &PointCloud, pose: &Pose) -> Vec<f64> {
    cloud
        .points()
        .iter()
        .map(|p| pose.transform_point(p).z)
        .filter(|z| *z > 0.0)
        .collect()
}
