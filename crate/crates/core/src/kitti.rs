//! KITTI odometry `calib.txt` parsing.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{CalibError, Result};
use crate::geometry::{Intrinsics, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct KittiCalib {
    /// Row-major 3×4 projection matrices `P0..P3`.
    pub projections: [[f64; 12]; 4],
    /// Velodyne to rectified camera 0.
    pub velo_to_cam0: Pose,
}

impl KittiCalib {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut projections = [None; 4];
        let mut tr = None;
        for (n, line) in text.lines().enumerate() {
            let Some((key, rest)) = line.split_once(':') else {
                continue;
            };
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CalibError::format(path, n + 1, e.to_string()))?;
            let arr: [f64; 12] = values
                .try_into()
                .map_err(|_| CalibError::format(path, n + 1, format!("{key} needs 12 values")))?;
            match key.trim() {
                "P0" => projections[0] = Some(arr),
                "P1" => projections[1] = Some(arr),
                "P2" => projections[2] = Some(arr),
                "P3" => projections[3] = Some(arr),
                "Tr" | "Tr_velo_to_cam" => tr = Some(arr),
                _ => {}
            }
        }
        let missing = |what: &str| CalibError::format(path, 0, format!("missing {what}"));
        let tr = tr.ok_or_else(|| missing("Tr"))?;
        let mut p = [[0.0; 12]; 4];
        for (i, slot) in projections.iter().enumerate() {
            p[i] = slot.ok_or_else(|| missing(&format!("P{i}")))?;
        }
        let m = Matrix3::new(
            tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10],
        );
        let velo_to_cam0 = Pose::from_rounded(m, Vector3::new(tr[3], tr[7], tr[11]))?;
        Ok(Self {
            projections: p,
            velo_to_cam0,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CalibError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn intrinsics(&self, camera: usize, width: u32, height: u32) -> Result<Intrinsics> {
        let p = self.camera(camera)?;
        Intrinsics::new(p[0], p[5], p[2], p[6], width, height)
    }

    /// LiDAR-to-camera extrinsic of camera `camera`: the rectified-frame offset
    /// `K⁻¹·P[:, 3]` composed after `Tr`.
    pub fn ground_truth(&self, camera: usize) -> Result<Pose> {
        let p = self.camera(camera)?;
        let tz = p[11];
        let ty = (p[7] - p[6] * tz) / p[5];
        let tx = (p[3] - p[1] * ty - p[2] * tz) / p[0];
        Ok(Pose::from_translation(Vector3::new(tx, ty, tz)).compose(&self.velo_to_cam0))
    }

    fn camera(&self, camera: usize) -> Result<&[f64; 12]> {
        self.projections.get(camera).ok_or_else(|| {
            CalibError::InvalidInput(format!("KITTI has cameras 0..3, not {camera}"))
        })
    }
}
