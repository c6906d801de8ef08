//! The `calibrate` config file.
//!
//! ```toml
//! scenes = ["scene0", "scene1"]        # stems, relative to this file
//! ground_truth = "ground_truth.txt"    # optional pose block
//! output = "out"
//!
//! [intrinsics]
//! fx = 500.0
//! fy = 500.0
//! cx = 319.5
//! cy = 239.5
//! width = 640
//! height = 480
//!
//! [pipeline]
//! virtual_masks = "segment"
//! ```
//!
//! A `[kitti]` table may replace `scenes` and `intrinsics`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lcc_core::kitti::KittiCalib;
use lcc_core::report::parse_pose_block;
use lcc_core::{Intrinsics, PipelineConfig, Pose};
use serde::Deserialize;

use crate::scenes::SceneFiles;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scenes: Vec<PathBuf>,
    pub intrinsics: Option<Intrinsics>,
    pub ground_truth: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub kitti: Option<KittiSource>,
    pub pipeline: PipelineConfig,
}

/// A KITTI odometry sequence. Masks and depth maps come from `prepared`, matched
/// to frames by stem (`000000.masks.jsonl`, `000000.depth.png`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KittiSource {
    pub sequence: PathBuf,
    #[serde(default = "default_camera")]
    pub camera: usize,
    #[serde(default = "default_every")]
    pub every: usize,
    pub prepared: Option<PathBuf>,
    pub max_frames: Option<usize>,
}

fn default_camera() -> usize {
    2
}

fn default_every() -> usize {
    10
}

/// Everything `calibrate` needs, with paths resolved.
pub struct Resolved {
    pub scenes: Vec<SceneFiles>,
    pub intrinsics: Intrinsics,
    pub ground_truth: Option<Pose>,
    pub output: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn resolve(self, base: &Path) -> anyhow::Result<Resolved> {
        let at = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut ground_truth = match &self.ground_truth {
            Some(p) => {
                let p = at(p);
                let text = std::fs::read_to_string(&p)
                    .with_context(|| format!("reading {}", p.display()))?;
                Some(parse_pose_block(&text).with_context(|| format!("parsing {}", p.display()))?)
            }
            None => None,
        };
        let (scenes, intrinsics) = match &self.kitti {
            Some(src) => {
                let (scenes, k, gt) = kitti_scenes(src, &at)?;
                ground_truth = ground_truth.or(Some(gt));
                (scenes, self.intrinsics.unwrap_or(k))
            }
            None => {
                let k = self.intrinsics.context("camera intrinsics are required")?;
                let scenes: Vec<SceneFiles> = self
                    .scenes
                    .iter()
                    .map(|s| SceneFiles::from_stem(&at(s)))
                    .collect();
                (scenes, k)
            }
        };
        if scenes.is_empty() {
            bail!("no scenes listed");
        }
        intrinsics.validate()?;
        Ok(Resolved {
            scenes,
            intrinsics,
            ground_truth,
            output: self.output.as_deref().map(at),
            pipeline: self.pipeline,
        })
    }
}

fn kitti_scenes(
    src: &KittiSource,
    at: &dyn Fn(&Path) -> PathBuf,
) -> anyhow::Result<(Vec<SceneFiles>, Intrinsics, Pose)> {
    let seq = at(&src.sequence);
    let calib = KittiCalib::load(seq.join("calib.txt"))?;
    let images = seq.join(format!("image_{}", src.camera));
    let prepared = src
        .prepared
        .as_deref()
        .map(at)
        .unwrap_or_else(|| images.clone());
    let mut frames: Vec<PathBuf> = std::fs::read_dir(seq.join("velodyne"))
        .with_context(|| format!("listing {}", seq.join("velodyne").display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    frames.sort();
    let every = src.every.max(1);
    let scenes: Vec<SceneFiles> = frames
        .iter()
        .step_by(every)
        .take(src.max_frames.unwrap_or(usize::MAX))
        .map(|cloud| {
            let stem = cloud
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let depth_masks = prepared.join(format!("{stem}.depth.masks.jsonl"));
            SceneFiles {
                name: stem.clone(),
                cloud: cloud.clone(),
                image: images.join(format!("{stem}.png")),
                masks: prepared.join(format!("{stem}.masks.jsonl")),
                depth: prepared.join(format!("{stem}.depth.png")),
                depth_masks: depth_masks.exists().then_some(depth_masks),
                spec: None,
            }
        })
        .collect();
    let first = scenes
        .first()
        .context("the sequence has no velodyne frames")?;
    let (w, h) = image_size(&first.image)?;
    Ok((
        scenes,
        calib.intrinsics(src.camera, w, h)?,
        calib.ground_truth(src.camera)?,
    ))
}

fn image_size(path: &Path) -> anyhow::Result<(u32, u32)> {
    let img = lcc_core::Raster::load_gray(path)?;
    Ok((img.width() as u32, img.height() as u32))
}
