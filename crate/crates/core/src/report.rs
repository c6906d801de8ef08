//! Plain-text calibration report. The layout is stable and carries no timings,
//! so equal inputs give byte-identical reports.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::dpcm::Pathway;
use crate::error::{CalibError, Result};
use crate::geometry::{error_metrics, Intrinsics, Pose};
use crate::optimizer::SolveConfig;
use crate::pipeline::{residual_stats, CalibrationResult, MultiSceneStatus};

pub fn render_report(
    result: &CalibrationResult,
    k: &Intrinsics,
    solve: &SolveConfig,
    ground_truth: Option<&Pose>,
) -> String {
    let mut out = String::new();
    let total = result.scenes.len() + result.skipped.len();
    writeln!(out, "# extrinsic calibration report").unwrap();
    writeln!(out, "strategy: {}", strategy_name(result)).unwrap();
    writeln!(
        out,
        "scenes: {} of {} calibrated",
        result.scenes.len(),
        total
    )
    .unwrap();
    match &result.multi_scene {
        MultiSceneStatus::Skipped(reason) => {
            writeln!(out, "multi-scene: skipped ({reason})").unwrap()
        }
        MultiSceneStatus::Joint {
            scenes,
            iterations,
            converged,
            loss,
        } => {
            writeln!(
            out,
            "multi-scene: joint over {scenes} scenes, {iterations} iterations, {}, loss {loss:.9e}",
            if *converged { "converged" } else { "iteration cap" }
        )
            .unwrap()
        }
    }
    writeln!(out).unwrap();
    writeln!(out, "Calibration parameters").unwrap();
    out.push_str(&pose_block(&result.pose));
    writeln!(out).unwrap();
    writeln!(out, "Scenes").unwrap();
    let mut lines: Vec<(usize, String)> = Vec::new();
    for s in &result.scenes {
        let st = residual_stats(&s.bundle, &result.pose, k, solve);
        let textural: usize = s
            .bundle
            .correspondences
            .iter()
            .filter(|c| c.pathway == Pathway::Textural)
            .map(|c| c.len())
            .sum();
        lines.push((
            s.index,
            format!(
                "scene {} {}: views {}+{}, correspondences {} (textural {}, spatial {}), subset {}, inliers {}, median residual {:.4} px, mean G {:.6e}",
                s.index,
                s.name,
                s.plan.n_intensity,
                s.plan.n_depth,
                st.count,
                textural,
                st.count - textural,
                s.bundle.subset.len(),
                st.inliers,
                st.median_px,
                st.mean_g
            ),
        ));
    }
    for (i, name, reason) in &result.skipped {
        lines.push((*i, format!("scene {i} {name}: skipped, {reason}")));
    }
    lines.sort_by_key(|l| l.0);
    for (_, l) in lines {
        writeln!(out, "{l}").unwrap();
    }
    if let Some(gt) = ground_truth {
        let e = error_metrics(&result.pose, gt);
        writeln!(out).unwrap();
        writeln!(out, "Ground truth").unwrap();
        out.push_str(&pose_block(gt));
        writeln!(out, "e_r = {:.9} deg", e.rotation_deg).unwrap();
        writeln!(out, "e_t = {:.9} m", e.translation_m).unwrap();
        writeln!(
            out,
            "euler error (yaw pitch roll) = {:.6} {:.6} {:.6} deg",
            e.euler_deg[0], e.euler_deg[1], e.euler_deg[2]
        )
        .unwrap();
    }
    out
}

fn strategy_name(result: &CalibrationResult) -> &'static str {
    use crate::discriminator::CameraStrategy::*;
    match result.strategy {
        DensityBalance => "density",
        FovRatio => "fov",
        InitialGuess => "initial-guess",
        Manual => "manual",
    }
}

/// `R =` and `t =` rows in scientific notation with 12 fractional digits.
pub fn pose_block(pose: &Pose) -> String {
    let m = pose.rotation_matrix();
    let t = pose.translation();
    let mut out = String::from("R =\n");
    for r in 0..3 {
        writeln!(
            out,
            "  {:.12e} {:.12e} {:.12e}",
            m[(r, 0)],
            m[(r, 1)],
            m[(r, 2)]
        )
        .unwrap();
    }
    out.push_str("t =\n");
    writeln!(out, "  {:.12e} {:.12e} {:.12e}", t.x, t.y, t.z).unwrap();
    out
}

/// Reads the first `R =` / `t =` block of a report (or of a bare pose file).
pub fn parse_pose_block(text: &str) -> Result<Pose> {
    let lines: Vec<&str> = text.lines().collect();
    let bad = |m: &str| CalibError::InvalidInput(format!("pose block: {m}"));
    let row = |i: usize| -> Result<[f64; 3]> {
        let line = lines.get(i).ok_or_else(|| bad("truncated"))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(&e.to_string()))?;
        <[f64; 3]>::try_from(v).map_err(|_| bad("expected three numbers"))
    };
    let start = lines
        .iter()
        .position(|l| l.trim() == "R =")
        .ok_or_else(|| bad("missing `R =`"))?;
    let (r0, r1, r2) = (row(start + 1)?, row(start + 2)?, row(start + 3)?);
    if lines.get(start + 4).map(|l| l.trim()) != Some("t =") {
        return Err(bad("missing `t =`"));
    }
    let t = row(start + 5)?;
    let m = Matrix3::new(
        r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2],
    );
    Pose::from_rounded(m, Vector3::from(t))
}

/// Reads the `e_r` and `e_t` lines of a report, if present.
pub fn parse_errors(text: &str) -> Option<(f64, f64)> {
    let find = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|v| v.parse::<f64>().ok())
    };
    Some((find("e_r = ")?, find("e_t = ")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{forward_facing_rotation, EulerAngles};

    #[test]
    fn pose_block_round_trips() {
        let rot =
            forward_facing_rotation() * EulerAngles::from_degrees(1.0, -0.5, 0.3).to_rotation();
        let pose = Pose::looking_from(rot, Vector3::new(0.1, -0.2, 0.05));
        let back = parse_pose_block(&pose_block(&pose)).unwrap();
        let (dr, dt) = back.distance_to(&pose);
        assert!(dr < 1e-9 && dt < 1e-11, "{dr} {dt}");
    }

    #[test]
    fn rejects_malformed_blocks() {
        assert!(parse_pose_block("R =\n 1 0 0\n 0 1 0\n").is_err());
        assert!(parse_pose_block("nothing here").is_err());
        assert!(parse_pose_block("R =\n 1 0 0\n 0 1 0\n 0 0 1\nt =\n 1 2\n").is_err());
    }

    #[test]
    fn parses_error_lines() {
        let text = "x\ne_r = 0.125000000 deg\ne_t = 0.010000000 m\n";
        assert_eq!(parse_errors(text), Some((0.125, 0.01)));
        assert_eq!(parse_errors("e_r = 1 deg\n"), None);
    }
}
