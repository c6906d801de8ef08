//! Dual-path correspondence matching: mask pairing, per-pair similarity
//! alignment, corner cost matrices and mutual-best corner selection.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Rotation2, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::geometry::PointPair;
use crate::masks::{CornerPoint, Mask};
use crate::polygon::{self, Point2};

/// Which pair of images produced a correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pathway {
    /// LiDAR intensity vs camera image.
    Textural,
    /// LiDAR depth vs camera depth.
    Spatial,
}

impl Pathway {
    pub fn name(&self) -> &'static str {
        match self {
            Pathway::Textural => "textural",
            Pathway::Spatial => "spatial",
        }
    }
}

/// `x ↦ s·R·x + t` in pixel coordinates, mapping a virtual image onto the camera image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Rotation2<f64>,
    pub translation: Vector2<f64>,
    /// Rotation was unstable and replaced by the identity.
    pub rotation_fallback: bool,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation2::identity(),
            translation: Vector2::zeros(),
            rotation_fallback: false,
        }
    }
}

impl SimilarityTransform {
    pub fn apply(&self, p: &Point2) -> Point2 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_inverse(&self, p: &Point2) -> Point2 {
        self.rotation.inverse() * (p - self.translation) / self.scale
    }
}

/// Smallest principal-moment ratio for which a mask's orientation is trusted.
const MIN_AXIS_RATIO: f64 = 1.5;
/// Larger rotations between paired masks are treated as unstable.
const MAX_ALIGN_ROTATION: f64 = std::f64::consts::FRAC_PI_4;

/// Aligns a virtual mask onto its camera counterpart.
///
/// Scale is the ratio of instance box sizes, rotation the difference of the
/// polygons' principal axes, and the translation maps instance centers onto
/// each other. Round or strongly rotated shapes keep an identity rotation.
pub fn estimate_similarity(virt: &Mask, cam: &Mask) -> SimilarityTransform {
    let (bv, bc) = (&virt.bbox, &cam.bbox);
    let (ov, oc) = (bv.center(), bc.center());
    if bv.h <= 0.0 || bv.w <= 0.0 || bc.h <= 0.0 || bc.w <= 0.0 {
        return SimilarityTransform {
            translation: oc - ov,
            rotation_fallback: true,
            ..Default::default()
        };
    }
    let scale = ((bc.h * bc.w) / (bv.h * bv.w)).sqrt();
    let mut fallback = true;
    let mut angle = 0.0;
    if let (Some((tv, rv)), Some((tc, rc))) = (
        polygon::principal_axis(&virt.polygon),
        polygon::principal_axis(&cam.polygon),
    ) {
        let half_pi = std::f64::consts::FRAC_PI_2;
        // Axes are only defined modulo π.
        let mut d = tc - tv;
        while d > half_pi {
            d -= std::f64::consts::PI;
        }
        while d <= -half_pi {
            d += std::f64::consts::PI;
        }
        if rv >= MIN_AXIS_RATIO && rc >= MIN_AXIS_RATIO && d.abs() <= MAX_ALIGN_ROTATION {
            angle = d;
            fallback = false;
        }
    }
    let rotation = Rotation2::new(angle);
    SimilarityTransform {
        scale,
        rotation,
        translation: oc - rotation * ov * scale,
        rotation_fallback: fallback,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Weight of the structural term (distance and neighbor shape).
    pub beta_s: f64,
    /// Weight of the textural term.
    pub beta_t: f64,
    /// Scale of the neighbor similarity.
    pub w: f64,
    /// Corner pairs must cost strictly less than this.
    pub tau: f64,
    /// Unmatched camera masks within this many instance diagonals contribute extra corners.
    pub neighbor_radius: f64,
    /// Mask pairs must cost less than this.
    pub mask_threshold: f64,
    /// Overrides the Gaussian width `L²/2` of the distance term.
    pub width_override: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            beta_s: 1.0,
            beta_t: 1.0,
            w: 1.0,
            tau: 0.5,
            neighbor_radius: 1.5,
            mask_threshold: 0.5,
            width_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    pub virtual_index: usize,
    pub camera_index: usize,
    pub cost: f64,
    pub transform: SimilarityTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatchSet {
    pub pairs: Vec<MaskPair>,
    /// Mean perimeter of the matched masks, pixels.
    pub mean_perimeter: f64,
}

impl MaskMatchSet {
    /// Denominator of the corner distance term.
    pub fn width(&self, cfg: &MatchConfig) -> f64 {
        cfg.width_override
            .unwrap_or(0.5 * self.mean_perimeter * self.mean_perimeter)
            .max(1e-9)
    }
}

/// Cost of pairing two masks: instance-center distance over the image diagonal
/// plus absolute log ratios of area and aspect.
pub fn mask_cost(virt: &Mask, cam: &Mask, image_diagonal: f64) -> f64 {
    let center = (virt.center() - cam.center()).norm() / image_diagonal;
    let area = (virt.area.max(1) as f64 / cam.area.max(1) as f64)
        .ln()
        .abs();
    let aspect_v = (virt.bbox.w + 1.0) / (virt.bbox.h + 1.0);
    let aspect_c = (cam.bbox.w + 1.0) / (cam.bbox.h + 1.0);
    center + area + (aspect_v / aspect_c).ln().abs()
}

/// Greedy assignment on the mask cost matrix: repeatedly takes the cheapest
/// remaining cell below the threshold (lower indices first on ties).
pub fn match_masks(
    virtual_masks: &[Mask],
    camera_masks: &[Mask],
    image_diagonal: f64,
    cfg: &MatchConfig,
) -> Result<MaskMatchSet> {
    if virtual_masks.is_empty() || camera_masks.is_empty() {
        return Err(CalibError::NoMatches);
    }
    let mut cells: Vec<(f64, usize, usize)> = Vec::new();
    for (i, v) in virtual_masks.iter().enumerate() {
        for (j, c) in camera_masks.iter().enumerate() {
            let cost = mask_cost(v, c, image_diagonal);
            if cost < cfg.mask_threshold {
                cells.push((cost, i, j));
            }
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_v = vec![false; virtual_masks.len()];
    let mut used_c = vec![false; camera_masks.len()];
    let mut pairs = Vec::new();
    for (cost, i, j) in cells {
        if used_v[i] || used_c[j] {
            continue;
        }
        used_v[i] = true;
        used_c[j] = true;
        pairs.push(MaskPair {
            virtual_index: i,
            camera_index: j,
            cost,
            transform: estimate_similarity(&virtual_masks[i], &camera_masks[j]),
        });
    }
    if pairs.is_empty() {
        return Err(CalibError::NoMatches);
    }
    pairs.sort_by_key(|p| p.virtual_index);
    let perimeter_sum: f64 = pairs
        .iter()
        .map(|p| {
            virtual_masks[p.virtual_index].perimeter() + camera_masks[p.camera_index].perimeter()
        })
        .sum();
    Ok(MaskMatchSet {
        mean_perimeter: perimeter_sum / (2 * pairs.len()) as f64,
        pairs,
    })
}

fn neighbor_similarity(a: &Point2, c_hat: &Point2, b: &Point2, c: &Point2, w: f64) -> f64 {
    let (u, v) = (a - c_hat, b - c);
    let denom = u.norm().max(v.norm());
    if denom == 0.0 {
        return 0.0;
    }
    w * (u - v).norm() / denom
}

/// Matching cost between a virtual corner (mapped through `t`) and a camera corner.
///
/// `β_s·(1 − exp(−‖ĉ − c‖²/width) + Σ_k H_k) + β_t·mean|D_V − D_C|`, where `H_k`
/// is the smaller of the neighbor dissimilarities against `e_k` and `e_{K−k+1}`.
pub fn corner_cost(
    virt: &CornerPoint,
    cam: &CornerPoint,
    t: &SimilarityTransform,
    width: f64,
    cfg: &MatchConfig,
) -> f64 {
    let c_hat = t.apply(&virt.position);
    let c = cam.position;
    let mut structural = 1.0 - (-(c_hat - c).norm_squared() / width).exp();
    let k = virt.neighbors.len().min(cam.neighbors.len());
    for i in 0..k {
        let e_hat = t.apply(&virt.neighbors[i]);
        let fwd = neighbor_similarity(&e_hat, &c_hat, &cam.neighbors[i], &c, cfg.w);
        let rev = neighbor_similarity(&e_hat, &c_hat, &cam.neighbors[k - 1 - i], &c, cfg.w);
        structural += fwd.min(rev);
    }
    let n = virt.texture.len().min(cam.texture.len());
    let textural = if n == 0 {
        0.0
    } else {
        virt.texture
            .iter()
            .zip(&cam.texture)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64
    };
    cfg.beta_s * structural + cfg.beta_t * textural
}

/// Cells that are the strict minimum of their row and of their column and cost
/// strictly less than `tau`, in row order.
pub fn mutual_best(costs: &[Vec<f64>], tau: f64) -> Vec<(usize, usize)> {
    let rows = costs.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = costs[0].len();
    let strict_argmin = |vals: &mut dyn Iterator<Item = f64>| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let mut tie = false;
        for (i, v) in vals.enumerate() {
            match best {
                None => best = Some((i, v)),
                Some((_, b)) if v < b => {
                    best = Some((i, v));
                    tie = false;
                }
                Some((_, b)) if v == b => tie = true,
                _ => {}
            }
        }
        best.filter(|_| !tie).map(|b| b.0)
    };
    let col_best: Vec<Option<usize>> = (0..cols)
        .map(|j| strict_argmin(&mut (0..rows).map(|i| costs[i][j])))
        .collect();
    let mut out = Vec::new();
    for (i, row) in costs.iter().enumerate() {
        if let Some(j) = strict_argmin(&mut row.iter().copied()) {
            if col_best[j] == Some(i) && row[j] < tau {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub lidar: Vector3<f64>,
    pub pixel: Vector2<f64>,
    pub cost: f64,
    /// Normalized depth of the LiDAR point in the view that produced it.
    pub depth_norm: f64,
}

impl Correspondence {
    pub fn pair(&self) -> PointPair {
        PointPair::new(self.lidar, self.pixel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pathway: Pathway,
    pub view_index: usize,
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(pathway: Pathway, view_index: usize) -> Self {
        Self {
            pathway,
            view_index,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Builds the corner cost matrix over all matched virtual masks and selects
/// mutual-best pairs.
///
/// Each virtual corner is compared with the corners of its paired camera mask
/// and of unmatched camera masks whose centers lie within
/// `neighbor_radius` instance diagonals. Virtual corners without a LiDAR point
/// are not emitted.
pub fn match_corners(
    virtual_masks: &[Mask],
    camera_masks: &[Mask],
    matches: &MaskMatchSet,
    cfg: &MatchConfig,
    pathway: Pathway,
    view_index: usize,
) -> CorrespondenceSet {
    let width = matches.width(cfg);
    let matched_cam: Vec<bool> = {
        let mut m = vec![false; camera_masks.len()];
        for p in &matches.pairs {
            m[p.camera_index] = true;
        }
        m
    };
    // Columns: every camera corner, tagged with its mask.
    let cols: Vec<(usize, &CornerPoint)> = camera_masks
        .iter()
        .enumerate()
        .flat_map(|(j, m)| m.corners.iter().map(move |c| (j, c)))
        .collect();
    // Rows: corners of matched virtual masks with the pair they belong to.
    let rows: Vec<(&MaskPair, &CornerPoint)> = matches
        .pairs
        .iter()
        .flat_map(|p| {
            virtual_masks[p.virtual_index]
                .corners
                .iter()
                .map(move |c| (p, c))
        })
        .collect();
    let costs: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|(pair, vc)| {
            let own = &camera_masks[pair.camera_index];
            let reach = cfg.neighbor_radius * own.bbox.diagonal();
            cols.iter()
                .map(|(j, cc)| {
                    let eligible = *j == pair.camera_index
                        || (!matched_cam[*j]
                            && (camera_masks[*j].center() - own.center()).norm() <= reach);
                    if eligible {
                        corner_cost(vc, cc, &pair.transform, width, cfg)
                    } else {
                        f64::INFINITY
                    }
                })
                .collect()
        })
        .collect();
    let mut set = CorrespondenceSet::new(pathway, view_index);
    let mut selected: Vec<(f64, usize, usize)> = mutual_best(&costs, cfg.tau)
        .into_iter()
        .map(|(i, j)| (costs[i][j], i, j))
        .collect();
    selected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (cost, i, j) in selected {
        let Some(lidar) = rows[i].1.lidar_point else {
            continue;
        };
        let pixel = cols[j].1.position;
        // Shared box edges can yield the same point twice through different masks.
        let dup = set
            .pairs
            .iter()
            .any(|p| (p.lidar - lidar).norm() < 1e-9 || (p.pixel - pixel).norm() < 1e-9);
        if !dup {
            set.pairs.push(Correspondence {
                lidar,
                pixel,
                cost,
                depth_norm: 0.0,
            });
        }
    }
    set
}

/// Writes `x,y,z,u,v,cost,pathway,view` rows.
pub fn write_correspondence_csv(sets: &[CorrespondenceSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("x,y,z,u,v,cost,pathway,view\n");
    for set in sets {
        for p in &set.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                p.lidar.x,
                p.lidar.y,
                p.lidar.z,
                p.pixel.x,
                p.pixel.y,
                p.cost,
                set.pathway.name(),
                set.view_index
            );
        }
    }
    std::fs::write(path, out).map_err(|e| CalibError::io(path, e))
}
