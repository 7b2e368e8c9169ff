//! File formats and configuration: dataset directories, TUM trajectory text,
//! PNG/PFM images, self-describing checkpoints, run configs, and the
//! line-delimited JSON training log.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod tum;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use dataset::{Dataset, DatasetMeta};
pub use tum::{read_tum, write_tum};

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::renderer::FloatImage;

/// 8-bit PNG write; values are clamped/quantized by the image itself.
pub fn write_png(path: &Path, img: &FloatImage) -> Result<()> {
    let buf = img.to_u8();
    let rgb: image::RgbImage =
        image::RgbImage::from_raw(img.width as u32, img.height as u32, buf)
            .expect("buffer size matches dimensions");
    rgb.save(path)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<FloatImage> {
    let img = image::open(path)?.to_rgb8();
    Ok(FloatImage::from_u8(
        img.width() as usize,
        img.height() as usize,
        img.as_raw(),
    ))
}

/// Binary PFM (32-bit float, little endian, rows bottom to top).
pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            let c = img.get(x, y);
            for ch in 0..3 {
                w.write_all(&(c[ch] as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    // header: three newline-terminated tokens
    let mut pos = 0usize;
    let mut next_line = || -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Format(format!("{}: truncated PFM header", path.display())));
        }
        let line = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1;
        Ok(line)
    };
    let magic = next_line()?;
    if magic.trim() != "PF" {
        return Err(Error::Format(format!("{}: not a color PFM file", path.display())));
    }
    let dims = next_line()?;
    let mut it = dims.split_whitespace();
    let width: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: bad PFM dimensions", path.display())))?;
    let height: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: bad PFM dimensions", path.display())))?;
    let scale: f64 = next_line()?
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad PFM scale", path.display())))?;
    if scale >= 0.0 {
        return Err(Error::Format(format!(
            "{}: big-endian PFM not supported",
            path.display()
        )));
    }
    let expected = width * height * 3 * 4;
    if bytes.len() - pos < expected {
        return Err(Error::Format(format!("{}: truncated PFM payload", path.display())));
    }
    let mut img = FloatImage::new(width, height);
    let mut offset = pos;
    for y in (0..height).rev() {
        for x in 0..width {
            let mut c = [0.0f64; 3];
            for v in c.iter_mut() {
                let raw: [u8; 4] = bytes[offset..offset + 4].try_into().unwrap();
                *v = f32::from_le_bytes(raw) as f64;
                offset += 4;
            }
            img.set(x, y, &nalgebra::Vector3::new(c[0], c[1], c[2]));
        }
    }
    Ok(img)
}

/// One line of the machine-readable training log.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub loss: f64,
    pub lr_field: f64,
    pub lr_pose: f64,
    pub alpha: f64,
}

pub fn write_train_log(path: &Path, records: &[TrainLogRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
