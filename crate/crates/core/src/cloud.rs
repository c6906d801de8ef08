//! LiDAR point clouds and their on-disk formats.
//!
//! Two formats are read: KITTI velodyne `.bin` (little-endian `f32` quadruples
//! `x y z intensity`) and a whitespace-separated text format with one
//! `x y z intensity` point per line. Intensities are normalized to `[0, 1]` at
//! load time by dividing by the 99th percentile and clamping.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{CalibError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    intensities: Vec<f64>,
}

impl PointCloud {
    /// Intensities must already lie in `[0, 1]`.
    pub fn new(points: Vec<Vector3<f64>>, intensities: Vec<f64>) -> Result<Self> {
        if points.len() != intensities.len() {
            return Err(CalibError::InvalidInput(format!(
                "{} points but {} intensities",
                points.len(),
                intensities.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CalibError::InvalidInput(format!("point {i} is not finite")));
        }
        if let Some(i) = intensities
            .iter()
            .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(CalibError::InvalidInput(format!(
                "intensity {i} = {} outside [0, 1]",
                intensities[i]
            )));
        }
        Ok(Self {
            points,
            intensities,
        })
    }

    /// Builds a cloud from sensor-scale intensities, normalizing them.
    pub fn from_raw(points: Vec<Vector3<f64>>, raw_intensities: Vec<f64>) -> Result<Self> {
        if let Some(i) = raw_intensities
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(CalibError::InvalidInput(format!(
                "raw intensity {i} = {} is negative or not finite",
                raw_intensities[i]
            )));
        }
        let normalized = normalize_intensities(&raw_intensities);
        Self::new(points, normalized)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points[i]
    }

    pub fn intensity(&self, i: usize) -> f64 {
        self.intensities[i]
    }

    /// Points `range` in recorded order.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PointCloud {
        PointCloud {
            points: self.points[range.clone()].to_vec(),
            intensities: self.intensities[range].to_vec(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => read_kitti_bin(path),
            _ => read_xyzi_text(path),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => write_kitti_bin(self, path),
            _ => write_xyzi_text(self, path),
        }
    }
}

/// Divides by the 99th percentile and clamps into `[0, 1]`.
pub fn normalize_intensities(raw: &[f64]) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * 0.99).round() as usize;
    let p99 = sorted[idx];
    if p99 <= 0.0 {
        return raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    }
    raw.iter().map(|v| (v / p99).clamp(0.0, 1.0)).collect()
}

pub fn read_kitti_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| CalibError::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(CalibError::format(
            path,
            0,
            format!("length {} is not a multiple of 16 bytes", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut raw = Vec::with_capacity(bytes.len() / 16);
    for chunk in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let p = Vector3::new(f(0), f(1), f(2));
        let intensity = f(3);
        if !p.iter().all(|v| v.is_finite()) || !intensity.is_finite() {
            continue;
        }
        points.push(p);
        raw.push(intensity.max(0.0));
    }
    PointCloud::from_raw(points, raw)
}

pub fn write_kitti_bin(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for (p, i) in cloud.points.iter().zip(&cloud.intensities) {
        for v in [p.x, p.y, p.z, *i] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| CalibError::io(path, e))
}

pub fn read_xyzi_text(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path).map_err(|e| CalibError::io(path, e))?;
    let mut points = Vec::new();
    let mut raw = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CalibError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CalibError::format(path, lineno + 1, format!("{e}")))?;
        if fields.len() != 4 {
            return Err(CalibError::format(
                path,
                lineno + 1,
                format!(
                    "expected 4 fields `x y z intensity`, found {}",
                    fields.len()
                ),
            ));
        }
        points.push(Vector3::new(fields[0], fields[1], fields[2]));
        raw.push(fields[3]);
    }
    PointCloud::from_raw(points, raw).map_err(|e| CalibError::format(path, 0, e.to_string()))
}

pub fn write_xyzi_text(cloud: &PointCloud, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CalibError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (p, i) in cloud.points.iter().zip(&cloud.intensities) {
        writeln!(w, "{} {} {} {}", p.x, p.y, p.z, i).map_err(|e| CalibError::io(path, e))?;
    }
    w.flush().map_err(|e| CalibError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        let err = PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)], vec![0.5]);
        assert!(err.is_err());
    }

    #[test]
    fn intensity_normalization_uses_99th_percentile() {
        let mut raw: Vec<f64> = (0..100).map(|i| i as f64).collect();
        raw.push(10_000.0);
        let n = normalize_intensities(&raw);
        assert_eq!(n[0], 0.0);
        assert_eq!(*n.last().unwrap(), 1.0);
        assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
        // The outlier does not squash everything else towards zero.
        assert!(n[50] > 0.4);
    }

    #[test]
    fn kitti_and_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(
            vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-4.5, 0.25, 8.0)],
            vec![1.0, 0.5],
        )
        .unwrap();
        for name in ["c.bin", "c.txt"] {
            let path = dir.path().join(name);
            cloud.save(&path).unwrap();
            let back = PointCloud::load(&path).unwrap();
            assert_eq!(back.len(), 2);
            for (a, b) in back.points().iter().zip(cloud.points()) {
                assert!((a - b).norm() < 1e-6);
            }
            assert_eq!(back.intensities(), cloud.intensities());
        }
    }

    #[test]
    fn truncated_kitti_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, [0u8; 15]).unwrap();
        assert!(matches!(
            read_kitti_bin(&path),
            Err(CalibError::Format { .. })
        ));
    }
}
