//! RGB frames, depth maps, visibility masks and their on-disk formats.
//!
//! Frames are 8-bit RGB PNGs named `frame_00000.png`, …; masks are 8-bit
//! grayscale PNGs with values {0, 255}; depth maps are one file per frame
//! with an ASCII header line `depth <width> <height>\n` followed by
//! row-major little-endian 32-bit floats.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Frame {
            width,
            height,
            pixels: vec![[0, 0, 0]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{}={} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        self.pixels[row * self.width + col] = rgb;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in self.pixels.iter().enumerate() {
            let (r, c) = (i / self.width, i % self.width);
            buf.put_pixel(c as u32, r as u32, image::Rgb(*px));
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = img.pixels().map(|p| p.0).collect();
        Frame::from_pixels(w, h, pixels)
    }
}

/// Per-pixel positive metric depth along the optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    /// Rejects non-finite or non-positive depths.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "depth expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(Error::InvalidDepth(format!(
                "depth values must be finite and > 0, found {bad}"
            )));
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Median depth; the default orbit pivot distance.
    pub fn median(&self) -> f64 {
        let mut sorted = self.values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[sorted.len() / 2]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + self.values.len() * 4);
        out.extend_from_slice(format!("depth {} {}\n", self.width, self.height).as_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let header_end = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::BadFormat {
                path: path.into(),
                reason: "missing header line".into(),
            })?;
        let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| Error::BadFormat {
            path: path.into(),
            reason: "non-ascii header".into(),
        })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "depth" {
            return Err(Error::BadFormat {
                path: path.into(),
                reason: format!("bad header `{header}`"),
            });
        }
        let width: usize = parts[1].parse().map_err(|_| Error::BadFormat {
            path: path.into(),
            reason: "bad width".into(),
        })?;
        let height: usize = parts[2].parse().map_err(|_| Error::BadFormat {
            path: path.into(),
            reason: "bad height".into(),
        })?;
        let body = &bytes[header_end + 1..];
        if body.len() != width * height * 4 {
            return Err(Error::BadFormat {
                path: path.into(),
                reason: format!(
                    "expected {} payload bytes, got {}",
                    width * height * 4,
                    body.len()
                ),
            });
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        DepthMap::new(width, height, values)
    }
}

/// Binary visibility grid: 1 = visible surface, 0 = hole/occluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl VisibilityMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        VisibilityMask {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        VisibilityMask {
            width,
            height,
            values: vec![1; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| *v > 1) {
            return Err(Error::InvalidArgument(
                "mask values must be 0 or 1".into(),
            ));
        }
        Ok(VisibilityMask {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        debug_assert!(v <= 1);
        self.values[row * self.width + col] = v;
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Mean of the mask values in [0, 1].
    pub fn fraction(&self) -> f64 {
        self.values.iter().map(|v| *v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::GrayImage::new(self.width as u32, self.height as u32);
        for (i, v) in self.values.iter().enumerate() {
            let (r, c) = (i / self.width, i % self.width);
            buf.put_pixel(c as u32, r as u32, image::Luma([*v * 255]));
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let values = img.pixels().map(|p| u8::from(p.0[0] > 127)).collect();
        VisibilityMask::from_values(w, h, values)
    }
}

fn frame_path(dir: &Path, stem: &str, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_{index:05}.{ext}"))
}

/// Writes `frames` as `frame_00000.png`… under `dir`, creating it.
pub fn save_frame_sequence(dir: &Path, frames: &[Frame]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save_png(&frame_path(dir, "frame", i, "png"))?;
    }
    Ok(())
}

/// Loads `frame_00000.png`… from `dir` until the numbering stops.
pub fn load_frame_sequence(dir: &Path) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    loop {
        let path = frame_path(dir, "frame", frames.len(), "png");
        if !path.exists() {
            break;
        }
        frames.push(Frame::load_png(&path)?);
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no frame_00000.png under {}",
            dir.display()
        )));
    }
    Ok(frames)
}

pub fn save_mask_sequence(dir: &Path, masks: &[VisibilityMask]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in masks.iter().enumerate() {
        m.save_png(&frame_path(dir, "mask", i, "png"))?;
    }
    Ok(())
}

pub fn load_mask_sequence(dir: &Path) -> Result<Vec<VisibilityMask>> {
    let mut masks = Vec::new();
    loop {
        let path = frame_path(dir, "mask", masks.len(), "png");
        if !path.exists() {
            break;
        }
        masks.push(VisibilityMask::load_png(&path)?);
    }
    if masks.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no mask_00000.png under {}",
            dir.display()
        )));
    }
    Ok(masks)
}

pub fn save_depth_sequence(dir: &Path, depths: &[DepthMap]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, d) in depths.iter().enumerate() {
        d.save(&frame_path(dir, "depth", i, "bin"))?;
    }
    Ok(())
}

pub fn load_depth_sequence(dir: &Path) -> Result<Vec<DepthMap>> {
    let mut depths = Vec::new();
    loop {
        let path = frame_path(dir, "depth", depths.len(), "bin");
        if !path.exists() {
            break;
        }
        depths.push(DepthMap::load(&path)?);
    }
    if depths.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no depth_00000.bin under {}",
            dir.display()
        )));
    }
    Ok(depths)
}
