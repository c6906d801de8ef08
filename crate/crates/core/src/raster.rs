//! Dense scalar images and PNG I/O.
//!
//! Depth maps are stored as 16-bit grayscale PNGs next to a sidecar text file
//! (`<stem>.txt`) holding `scale_mm_per_unit <value>`; a missing sidecar means
//! one millimeter per unit.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use crate::error::{CalibError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(CalibError::InvalidInput(format!(
                "raster data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Sample with mirrored (reflect-101) borders.
    pub fn get_mirrored(&self, x: i64, y: i64) -> f64 {
        let mx = mirror(x, self.width);
        let my = mirror(y, self.height);
        self.get(mx, my)
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// Maps positive values affinely onto `[0, 1]`; zeros (empty) stay zero.
    pub fn normalized_positive(&self) -> Raster {
        let (lo, hi) = self
            .data
            .iter()
            .filter(|v| **v > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        let span = hi - lo;
        let data = self
            .data
            .iter()
            .map(|v| {
                if *v <= 0.0 {
                    0.0
                } else if span > 0.0 {
                    (v - lo) / span
                } else {
                    0.0
                }
            })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn load_gray(path: impl AsRef<Path>) -> Result<Raster> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| image_err(path, e))?;
        let gray = img.to_luma32f();
        let (w, h) = gray.dimensions();
        let data = gray.into_raw().into_iter().map(f64::from).collect();
        Raster::from_vec(w as usize, h as usize, data)
    }

    /// Writes values clamped to `[0, 1]` as an 8-bit grayscale PNG.
    pub fn save_gray8(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                Luma([(self.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
            });
        buf.save(path).map_err(|e| image_err(path, e))
    }

    /// Writes the image as RGB with one colored pixel per `(position, value)`
    /// dot; values in `[0, 1]` run from blue to red.
    pub fn save_overlay(
        &self,
        dots: &[(crate::polygon::Point2, f64)],
        path: impl AsRef<Path>,
    ) -> Result<()> {
        let path = path.as_ref();
        let mut buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                let g = (self.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
                image::Rgb([g, g, g])
            });
        for (p, v) in dots {
            let (x, y) = (p.x.round(), p.y.round());
            if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
                continue;
            }
            let v = v.clamp(0.0, 1.0);
            let color = [
                (255.0 * v) as u8,
                (255.0 * (1.0 - (2.0 * v - 1.0).abs())) as u8,
                (255.0 * (1.0 - v)) as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
        buf.save(path).map_err(|e| image_err(path, e))
    }
}

fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn image_err(path: &Path, e: image::ImageError) -> CalibError {
    CalibError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn depth_sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("txt")
}

fn read_depth_scale(png: &Path) -> Result<f64> {
    let sidecar = depth_sidecar_path(png);
    let text = match fs::read_to_string(&sidecar) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(1.0),
        Err(e) => return Err(CalibError::io(&sidecar, e)),
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line
            .split(|c: char| c.is_whitespace() || c == '=' || c == ':')
            .filter(|s| !s.is_empty());
        if parts.next() == Some("scale_mm_per_unit") {
            let value = parts
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| {
                    CalibError::format(
                        &sidecar,
                        lineno + 1,
                        "scale_mm_per_unit must be a positive number",
                    )
                })?;
            return Ok(value);
        }
    }
    Ok(1.0)
}

/// Reads a 16-bit depth PNG, returning depths in meters (0 = no depth).
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let scale_mm = read_depth_scale(path)?;
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| v as f64 * scale_mm / 1000.0)
        .collect();
    Raster::from_vec(w as usize, h as usize, data)
}

/// Writes depths (meters) as 16-bit PNG with the given millimeters-per-unit scale.
pub fn write_depth_png(depth: &Raster, path: impl AsRef<Path>, scale_mm: f64) -> Result<()> {
    let path = path.as_ref();
    if !(scale_mm > 0.0) {
        return Err(CalibError::InvalidInput(
            "depth scale must be positive".into(),
        ));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
            let mm = depth.get(x as usize, y as usize) * 1000.0 / scale_mm;
            Luma([mm.round().clamp(0.0, u16::MAX as f64) as u16])
        });
    buf.save(path).map_err(|e| image_err(path, e))?;
    let sidecar = depth_sidecar_path(path);
    fs::write(&sidecar, format!("scale_mm_per_unit {scale_mm}\n"))
        .map_err(|e| CalibError::io(&sidecar, e))
}
