//! Dataset directory layout:
//!
//! ```text
//! meta.json            intrinsics, timing, render bounds, scene extent
//! rs/frame_%04d.png    rolling-shutter captures (8-bit)
//! gs/frame_%04d.png    global-shutter references at the frame-start poses
//! rs_float/… gs_float/ optional PFM copies, written when float_images is set
//! traj_gt_rows.txt     ground-truth pose at every row time (TUM format)
//! traj_gt_frames.txt   ground-truth pose at every frame start (TUM format)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, RsTiming};
use crate::error::{Error, Result};
use crate::lie::Pose;
use crate::renderer::FloatImage;

use super::{read_png, read_pfm, write_pfm, write_png, write_tum, read_tum};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub intrinsics: Intrinsics,
    pub timing: RsTiming,
    pub background: [f64; 3],
    /// Render bounds used to generate the data; sensible defaults for training.
    pub near: f64,
    pub far: f64,
    /// Bounding-box diagonal of the scene, the unit for relative noise.
    pub scene_extent: f64,
    /// Suggested field bounding box.
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub float_images: bool,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.timing.validate(self.intrinsics.height)?;
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::config("meta.near/far", "need 0 < near < far"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub rs: Vec<FloatImage>,
    pub gs: Vec<FloatImage>,
    pub gt_rows: Vec<(f64, Pose)>,
    pub gt_frames: Vec<(f64, Pose)>,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

fn frame_name_pfm(i: usize) -> String {
    format!("frame_{i:04}.pfm")
}

/// Write a complete dataset directory. Images are quantized to 8-bit before
/// writing; float copies are also stored when `meta.float_images` is set.
pub fn write_dataset(
    dir: &Path,
    meta: &DatasetMeta,
    rs: &[FloatImage],
    gs: &[FloatImage],
    gt_rows: &[(f64, Pose)],
    gt_frames: &[(f64, Pose)],
) -> Result<()> {
    fs::create_dir_all(dir.join("rs"))?;
    fs::create_dir_all(dir.join("gs"))?;
    if meta.float_images {
        fs::create_dir_all(dir.join("rs_float"))?;
        fs::create_dir_all(dir.join("gs_float"))?;
    }
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    for (i, img) in rs.iter().enumerate() {
        write_png(&dir.join("rs").join(frame_name(i)), img)?;
        if meta.float_images {
            write_pfm(&dir.join("rs_float").join(frame_name_pfm(i)), img)?;
        }
    }
    for (i, img) in gs.iter().enumerate() {
        write_png(&dir.join("gs").join(frame_name(i)), img)?;
        if meta.float_images {
            write_pfm(&dir.join("gs_float").join(frame_name_pfm(i)), img)?;
        }
    }
    write_tum(&dir.join("traj_gt_rows.txt"), gt_rows)?;
    write_tum(&dir.join("traj_gt_frames.txt"), gt_frames)?;
    Ok(())
}

impl Dataset {
    /// Load a dataset directory. With `prefer_float` the PFM copies are used
    /// when present, bypassing 8-bit quantization.
    pub fn load(dir: &Path, prefer_float: bool) -> Result<Dataset> {
        let meta_path = dir.join("meta.json");
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(
            |e| Error::config("dataset", format!("{}: {e}", meta_path.display())),
        )?)?;
        meta.validate()?;
        let frames = meta.timing.frames();
        let use_float = prefer_float && meta.float_images;

        let load_frames = |sub: &str, sub_float: &str| -> Result<Vec<FloatImage>> {
            let mut out = Vec::with_capacity(frames);
            for i in 0..frames {
                let img = if use_float {
                    read_pfm(&dir.join(sub_float).join(frame_name_pfm(i)))?
                } else {
                    read_png(&dir.join(sub).join(frame_name(i)))?
                };
                if img.width != meta.intrinsics.width || img.height != meta.intrinsics.height {
                    return Err(Error::DimensionMismatch {
                        a_w: img.width,
                        a_h: img.height,
                        b_w: meta.intrinsics.width,
                        b_h: meta.intrinsics.height,
                        context: format!(" ({sub}/{})", frame_name(i)),
                    });
                }
                out.push(img);
            }
            Ok(out)
        };

        let rs = load_frames("rs", "rs_float")?;
        let gs = load_frames("gs", "gs_float")?;
        let gt_rows = read_tum(&dir.join("traj_gt_rows.txt"))?;
        let gt_frames = read_tum(&dir.join("traj_gt_frames.txt"))?;
        Ok(Dataset {
            meta,
            rs,
            gs,
            gt_rows,
            gt_frames,
        })
    }

    pub fn frames(&self) -> usize {
        self.rs.len()
    }
}

/// All image files directly inside `dir` (by file name), for eval pairing.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            out.push((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                path,
            ));
        }
    }
    out.sort();
    Ok(out)
}
