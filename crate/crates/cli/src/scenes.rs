//! Scene files on disk. A scene is a set of files sharing a stem:
//!
//! | file | content |
//! |---|---|
//! | `<stem>.bin` or `<stem>.xyzi` | point cloud |
//! | `<stem>.png` | camera image |
//! | `<stem>.masks.jsonl` | camera image masks |
//! | `<stem>.depth.png` (+ `<stem>.depth.txt`) | camera depth, 16 bit |
//! | `<stem>.depth.masks.jsonl` | depth masks (optional, image masks otherwise) |
//! | `<stem>.scene.toml` | generator spec (oracle virtual masks only) |

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lcc_core::masks::{load_masks, save_masks};
use lcc_core::pipeline::{LevelSegmenter, PipelineConfig, SceneInput, ViewSegmenter, VirtualMasks};
use lcc_core::raster::{read_depth_png, write_depth_png};
use lcc_core::report::pose_block;
use lcc_core::synthetic::{generate, SceneSpec, SyntheticScene};
use lcc_core::{CalibError, PointCloud, Raster, Result};

/// Paths making up one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub name: String,
    pub cloud: PathBuf,
    pub image: PathBuf,
    pub masks: PathBuf,
    pub depth: PathBuf,
    pub depth_masks: Option<PathBuf>,
    pub spec: Option<PathBuf>,
}

impl SceneFiles {
    pub fn from_stem(stem: &Path) -> Self {
        let bin = with_suffix(stem, ".bin");
        let cloud = if bin.exists() {
            bin
        } else {
            with_suffix(stem, ".xyzi")
        };
        let depth_masks = with_suffix(stem, ".depth.masks.jsonl");
        let spec = with_suffix(stem, ".scene.toml");
        Self {
            name: scene_name(stem),
            cloud,
            image: with_suffix(stem, ".png"),
            masks: with_suffix(stem, ".masks.jsonl"),
            depth: with_suffix(stem, ".depth.png"),
            depth_masks: depth_masks.exists().then_some(depth_masks),
            spec: spec.exists().then_some(spec),
        }
    }

    pub fn load(&self, cfg: &PipelineConfig) -> Result<SceneInput> {
        let cloud = PointCloud::load(require(&self.cloud)?)?;
        let image = Raster::load_gray(require(&self.image)?)?;
        let masks = load_masks(require(&self.masks)?)?;
        let depth = read_depth_png(require(&self.depth)?)?;
        let depth_masks = match &self.depth_masks {
            Some(p) => load_masks(require(p)?)?,
            None => masks.clone(),
        };
        let segmenter: Arc<dyn ViewSegmenter> = match cfg.virtual_masks {
            VirtualMasks::Segment => Arc::new(LevelSegmenter {
                levels: cfg.segment_levels,
            }),
            VirtualMasks::Oracle => {
                let spec = self.spec.as_ref().ok_or_else(|| {
                    CalibError::InvalidInput(format!(
                        "oracle masks need a generator spec for {}",
                        self.name
                    ))
                })?;
                Arc::new(oracle(spec, &cloud)?)
            }
        };
        Ok(SceneInput {
            name: self.name.clone(),
            cloud,
            image,
            depth,
            masks,
            depth_masks,
            segmenter,
        })
    }
}

pub fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn scene_name(stem: &Path) -> String {
    stem.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| stem.display().to_string())
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CalibError::format(path, 0, "file is missing"))
    }
}

/// Regenerates the scene from its spec so face geometry and point labels are known.
fn oracle(path: &Path, cloud: &PointCloud) -> Result<SyntheticScene> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibError::io(path, e))?;
    let scene = generate(&SceneSpec::from_toml(&text)?)?;
    if scene.cloud.len() != cloud.len() {
        return Err(CalibError::InvalidInput(format!(
            "{} describes {} points but the cloud has {}",
            path.display(),
            scene.cloud.len(),
            cloud.len()
        )));
    }
    Ok(scene)
}

pub fn write_scene(stem: &Path, scene: &SyntheticScene) -> Result<()> {
    scene.cloud.save(with_suffix(stem, ".bin"))?;
    scene.image.save_gray8(with_suffix(stem, ".png"))?;
    save_masks(&scene.masks, with_suffix(stem, ".masks.jsonl"))?;
    write_depth_png(&scene.depth, with_suffix(stem, ".depth.png"), 1.0)?;
    save_masks(&scene.depth_masks, with_suffix(stem, ".depth.masks.jsonl"))?;
    write_text(&with_suffix(stem, ".scene.toml"), &scene.spec.to_toml())?;
    write_text(&with_suffix(stem, ".gt.txt"), &pose_block(&scene.extrinsic))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CalibError::io(path, e))
}
