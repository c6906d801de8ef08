//! Segmentation masks, their corner points and the JSON-lines mask file format.
//!
//! A mask file holds one record per line:
//! `{"id": 3, "polygon": [[x, y], ...], "area": 412, "bbox": [cx, cy, h, w]}`.
//! The polygon is authoritative; corners are always recomputed after loading.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};
use crate::polygon::{self, Point2};
use crate::raster::Raster;

/// Axis-aligned instance box of a mask polygon, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub h: f64,
    pub w: f64,
}

impl BoundingBox {
    pub fn of_polygon(poly: &[Point2]) -> Self {
        let (lo, hi) = polygon::bounds(poly);
        Self {
            cx: 0.5 * (lo.x + hi.x),
            cy: 0.5 * (lo.y + hi.y),
            h: hi.y - lo.y,
            w: hi.x - lo.x,
        }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn diagonal(&self) -> f64 {
        self.h.hypot(self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerPoint {
    /// Pixel position in its own image.
    pub position: Point2,
    /// `K` contour samples ordered along the contour, half before and half after the corner.
    pub neighbors: Vec<Point2>,
    /// `b × b` patch, row-major.
    pub texture: Vec<f64>,
    /// LiDAR-frame point for corners found in a rendered view.
    pub lidar_point: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub id: usize,
    pub polygon: Vec<Point2>,
    /// Pixel count of the rasterized region.
    pub area: usize,
    pub bbox: BoundingBox,
    pub corners: Vec<CornerPoint>,
}

impl Mask {
    /// Builds a mask from a closed polygon, rasterizing it for the area.
    pub fn from_polygon(id: usize, polygon: Vec<Point2>) -> Result<Self> {
        validate_polygon(id, &polygon)?;
        let area = rasterize(&polygon).len();
        let bbox = BoundingBox::of_polygon(&polygon);
        Ok(Self {
            id,
            polygon,
            area,
            bbox,
            corners: Vec::new(),
        })
    }

    pub fn perimeter(&self) -> f64 {
        polygon::perimeter(&self.polygon)
    }

    pub fn center(&self) -> Point2 {
        self.bbox.center()
    }

    pub fn pixels(&self) -> Vec<(i32, i32)> {
        rasterize(&self.polygon)
    }

    pub fn translated(&self, d: Point2) -> Mask {
        let mut m = self.clone();
        for p in &mut m.polygon {
            *p += d;
        }
        m.bbox.cx += d.x;
        m.bbox.cy += d.y;
        for c in &mut m.corners {
            c.position += d;
            for n in &mut c.neighbors {
                *n += d;
            }
        }
        m
    }
}

fn validate_polygon(id: usize, polygon: &[Point2]) -> Result<()> {
    if polygon.len() < 3 {
        return Err(CalibError::InvalidInput(format!(
            "mask {id}: polygon has {} vertices, need at least 3",
            polygon.len()
        )));
    }
    if polygon.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(CalibError::InvalidInput(format!(
            "mask {id}: non-finite vertex"
        )));
    }
    Ok(())
}

/// Pixels whose centers lie inside or on the boundary of `poly`, sorted by row then column.
pub fn rasterize(poly: &[Point2]) -> Vec<(i32, i32)> {
    const EPS: f64 = 1e-9;
    let n = poly.len();
    if n < 3 {
        return Vec::new();
    }
    let (lo, hi) = polygon::bounds(poly);
    let mut out = Vec::new();
    let mut xs = Vec::new();
    for y in (lo.y - EPS).ceil() as i64..=(hi.y + EPS).floor() as i64 {
        let yf = y as f64;
        xs.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a.y > yf) != (b.y > yf) {
                xs.push(a.x + (yf - a.y) * (b.x - a.x) / (b.y - a.y));
            } else if (a.y - yf).abs() < EPS && (b.y - yf).abs() < EPS {
                let (x0, x1) = (a.x.min(b.x), a.x.max(b.x));
                for x in (x0 - EPS).ceil() as i64..=(x1 + EPS).floor() as i64 {
                    out.push((x as i32, y as i32));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            for x in (pair[0] - EPS).ceil() as i64..=(pair[1] + EPS).floor() as i64 {
                out.push((x as i32, y as i32));
            }
        }
    }
    // Bottom-most vertices are skipped by the half-open crossing rule.
    for p in poly {
        let (rx, ry) = (p.x.round(), p.y.round());
        if (p.x - rx).abs() < EPS && (p.y - ry).abs() < EPS {
            out.push((rx as i32, ry as i32));
        }
    }
    out.sort_unstable_by_key(|&(x, y)| (y, x));
    out.dedup();
    out
}

/// Pixel count of the union of the masks' regions.
pub fn union_area(masks: &[Mask]) -> usize {
    let mut all: Vec<(i32, i32)> = masks.iter().flat_map(|m| m.pixels()).collect();
    all.sort_unstable();
    all.dedup();
    all.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerConfig {
    /// Douglas-Peucker tolerance, pixels.
    pub epsilon: f64,
    /// Neighbor samples per corner (even).
    pub neighbors: usize,
    /// Texture patch side.
    pub patch: usize,
    /// Neighbor spacing along the contour as a fraction of the perimeter.
    pub spacing_fraction: f64,
}

impl Default for CornerConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            neighbors: 6,
            patch: 7,
            spacing_fraction: 0.02,
        }
    }
}

/// Populates `mask.corners` from a Douglas-Peucker simplification of its contour.
///
/// Neighbors are contour samples at `±k·spacing` arc length (`k = 1..K/2`), so
/// they scale with the mask and reversing the contour maps `e_k ↦ e_{K−k+1}`.
/// Textures are sampled around the rounded corner position with mirrored borders;
/// without an image they are all zero.
pub fn extract_corners(mask: &Mask, cfg: &CornerConfig, image: Option<&Raster>) -> Result<Mask> {
    let poly = &mask.polygon;
    if poly.len() < 3 {
        return Err(CalibError::DegenerateContour {
            mask_id: mask.id,
            corners: poly.len(),
        });
    }
    let kept = polygon::douglas_peucker_closed(poly, cfg.epsilon);
    if kept.len() < 3 {
        return Err(CalibError::DegenerateContour {
            mask_id: mask.id,
            corners: kept.len(),
        });
    }
    let cumulative = polygon::arc_lengths(poly);
    let spacing = (cfg.spacing_fraction * cumulative[poly.len()]).max(1.0);
    let half = cfg.neighbors / 2;
    let corners = kept
        .iter()
        .map(|&i| {
            let s0 = cumulative[i];
            let mut neighbors = Vec::with_capacity(2 * half);
            for k in (1..=half).rev() {
                neighbors.push(polygon::point_at_arc(
                    poly,
                    &cumulative,
                    s0 - k as f64 * spacing,
                ));
            }
            for k in 1..=half {
                neighbors.push(polygon::point_at_arc(
                    poly,
                    &cumulative,
                    s0 + k as f64 * spacing,
                ));
            }
            CornerPoint {
                position: poly[i],
                neighbors,
                texture: sample_patch(image, &poly[i], cfg.patch),
                lidar_point: None,
            }
        })
        .collect();
    Ok(Mask {
        corners,
        ..mask.clone()
    })
}

pub fn sample_patch(image: Option<&Raster>, at: &Point2, b: usize) -> Vec<f64> {
    let Some(img) = image else {
        return vec![0.0; b * b];
    };
    let r = (b / 2) as i64;
    let (x0, y0) = (at.x.round() as i64, at.y.round() as i64);
    let mut out = Vec::with_capacity(b * b);
    for dy in -r..-r + b as i64 {
        for dx in -r..-r + b as i64 {
            out.push(img.get_mirrored(x0 + dx, y0 + dy));
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskRecord {
    id: usize,
    polygon: Vec<[f64; 2]>,
    area: usize,
    bbox: [f64; 4],
}

/// Reads a JSON-lines mask file. Corners are left empty for the caller to extract.
pub fn load_masks(path: impl AsRef<Path>) -> Result<Vec<Mask>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CalibError::io(path, e))?;
    let mut masks = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: MaskRecord = serde_json::from_str(line)
            .map_err(|e| CalibError::format(path, lineno + 1, e.to_string()))?;
        let polygon: Vec<Point2> = rec
            .polygon
            .iter()
            .map(|p| Point2::new(p[0], p[1]))
            .collect();
        validate_polygon(rec.id, &polygon)
            .map_err(|e| CalibError::format(path, lineno + 1, e.to_string()))?;
        masks.push(Mask {
            id: rec.id,
            polygon,
            area: rec.area,
            bbox: BoundingBox {
                cx: rec.bbox[0],
                cy: rec.bbox[1],
                h: rec.bbox[2],
                w: rec.bbox[3],
            },
            corners: Vec::new(),
        });
    }
    Ok(masks)
}

pub fn save_masks(masks: &[Mask], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CalibError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in masks {
        let rec = MaskRecord {
            id: m.id,
            polygon: m.polygon.iter().map(|p| [p.x, p.y]).collect(),
            area: m.area,
            bbox: [m.bbox.cx, m.bbox.cy, m.bbox.h, m.bbox.w],
        };
        let line = serde_json::to_string(&rec).expect("mask records serialize");
        writeln!(w, "{line}").map_err(|e| CalibError::io(path, e))?;
    }
    w.flush().map_err(|e| CalibError::io(path, e))
}

/// Minimum component size kept by [`synthetic_segment`].
pub const MIN_SEGMENT_PIXELS: usize = 25;

/// Stand-in segmenter: quantizes `[0, 1]` values into `levels` bins and returns
/// every 4-connected same-bin component of at least 25 pixels. Zero pixels are
/// background. Contours are traced with Moore neighborhoods through pixel centers.
pub fn synthetic_segment(img: &Raster, levels: usize) -> Vec<Mask> {
    let (w, h) = (img.width(), img.height());
    let levels = levels.max(1);
    let quant: Vec<i32> = img
        .data()
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                -1
            } else {
                ((v * levels as f64).floor() as i32).min(levels as i32 - 1)
            }
        })
        .collect();
    let mut label = vec![u32::MAX; w * h];
    let mut masks = Vec::new();
    let mut stack = Vec::new();
    let mut next_label = 0u32;
    for start in 0..w * h {
        if quant[start] < 0 || label[start] != u32::MAX {
            continue;
        }
        let q = quant[start];
        let mut count = 0usize;
        label[start] = next_label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if quant[j] == q && label[j] == u32::MAX {
                    label[j] = next_label;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if count >= MIN_SEGMENT_PIXELS {
            let contour = moore_trace(&label, w, h, start, next_label);
            if contour.len() >= 3 {
                let polygon: Vec<Point2> = contour
                    .iter()
                    .map(|&(x, y)| Point2::new(x as f64, y as f64))
                    .collect();
                masks.push(Mask {
                    id: masks.len(),
                    bbox: BoundingBox::of_polygon(&polygon),
                    polygon,
                    area: count,
                    corners: Vec::new(),
                });
            }
        }
        next_label += 1;
    }
    masks
}

/// Outer boundary of the component containing `start`, which must be its first
/// pixel in raster order. Clockwise on screen (y down).
fn moore_trace(label: &[u32], w: usize, h: usize, start: usize, id: u32) -> Vec<(i64, i64)> {
    const DIRS: [(i64, i64); 8] = [
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
    ];
    let inside = |x: i64, y: i64| {
        x >= 0
            && y >= 0
            && (x as usize) < w
            && (y as usize) < h
            && label[y as usize * w + x as usize] == id
    };
    let s = ((start % w) as i64, (start / w) as i64);
    let step = |c: (i64, i64), back: usize| -> Option<((i64, i64), usize)> {
        for i in 1..=8 {
            let d = (back + i) % 8;
            let n = (c.0 + DIRS[d].0, c.1 + DIRS[d].1);
            if inside(n.0, n.1) {
                let prev = (back + i - 1) % 8;
                let b = (c.0 + DIRS[prev].0 - n.0, c.1 + DIRS[prev].1 - n.1);
                let nb = DIRS.iter().position(|&d| d == b).unwrap_or(4);
                return Some((n, nb));
            }
        }
        None
    };
    let mut contour = vec![s];
    let Some((second, mut back)) = step(s, 4) else {
        return contour;
    };
    let mut cur = second;
    let limit = 4 * w * h + 8;
    for _ in 0..limit {
        let (next, nb) = step(cur, back).expect("component has a neighbor");
        if cur == s && next == second {
            break;
        }
        contour.push(cur);
        cur = next;
        back = nb;
    }
    contour
}
