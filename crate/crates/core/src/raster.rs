//! Dense row-major image buffers and their on-disk encodings.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Row-major 2D buffer of `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type GrayImage = Raster<f32>;
pub type RgbImage = Raster<[f32; 3]>;
pub type DepthImage = Raster<f32>;

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl GrayImage {
    /// Bilinear sample at continuous pixel coordinates; `None` outside the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

pub const GAMMA: f32 = 2.2;

/// Rec.709 luma weights.
pub const LUMA: [f32; 3] = [0.2126, 0.7152, 0.0722];

#[inline]
pub fn encode_gamma(linear: f32) -> f32 {
    linear.clamp(0.0, 1.0).powf(1.0 / GAMMA)
}

#[inline]
pub fn decode_gamma(encoded: f32) -> f32 {
    encoded.clamp(0.0, 1.0).powf(GAMMA)
}

/// Tone-mapped 8-bit RGB: clamp to [0,1], gamma 2.2, round.
pub fn to_rgb8(linear: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(linear.data.len() * 3);
    for px in &linear.data {
        for &c in px {
            out.push((encode_gamma(c) * 255.0).round() as u8);
        }
    }
    out
}

/// Grayscale training input from stored 8-bit RGB: channels are linearized,
/// combined with Rec.709 luma and re-encoded with gamma 2.2.
///
/// The in-memory and on-disk dataset paths both go through this function so
/// the network sees identical inputs either way.
pub fn gray_from_rgb8(width: usize, height: usize, rgb8: &[u8]) -> GrayImage {
    let lut: Vec<f32> = (0..256).map(|v| decode_gamma(v as f32 / 255.0)).collect();
    let data = rgb8
        .chunks_exact(3)
        .map(|c| {
            let l = LUMA[0] * lut[c[0] as usize] + LUMA[1] * lut[c[1] as usize] + LUMA[2] * lut[c[2] as usize];
            encode_gamma(l)
        })
        .collect();
    Raster { width, height, data }
}

/// Mean linear luminance of a gamma-encoded gray image.
pub fn mean_linear_luminance(gray: &GrayImage) -> f64 {
    gray.data.iter().map(|&v| decode_gamma(v) as f64).sum::<f64>() / gray.data.len().max(1) as f64
}

#[derive(Debug, thiserror::Error)]
pub enum RasterIoError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("image codec error on {path}: {message}")]
    Codec { path: String, message: String },
    #[error("malformed depth file {path}")]
    MalformedDepth { path: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterIoError + '_ {
    move |source| RasterIoError::Io { path: path.display().to_string(), source }
}

pub fn write_png_rgb8(path: &Path, width: usize, height: usize, rgb8: &[u8]) -> Result<(), RasterIoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    image::save_buffer(path, rgb8, width as u32, height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| RasterIoError::Codec { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_png_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>), RasterIoError> {
    let img = image::open(path)
        .map_err(|e| RasterIoError::Codec { path: path.display().to_string(), message: e.to_string() })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

pub fn write_gray_png(path: &Path, gray: &GrayImage) -> Result<(), RasterIoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let bytes: Vec<u8> = gray.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &bytes, gray.width as u32, gray.height as u32, image::ExtendedColorType::L8)
        .map_err(|e| RasterIoError::Codec { path: path.display().to_string(), message: e.to_string() })
}

/// Depth file: `u32 width, u32 height` (little-endian) then `width*height` f32 LE.
pub fn write_depth(path: &Path, depth: &DepthImage) -> Result<(), RasterIoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let mut buf = Vec::with_capacity(8 + depth.data.len() * 4);
    buf.extend_from_slice(&(depth.width as u32).to_le_bytes());
    buf.extend_from_slice(&(depth.height as u32).to_le_bytes());
    for v in &depth.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn read_depth(path: &Path) -> Result<DepthImage, RasterIoError> {
    let mut buf = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    let bad = || RasterIoError::MalformedDepth { path: path.display().to_string() };
    if buf.len() < 8 {
        return Err(bad());
    }
    let w = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    if buf.len() != 8 + w * h * 4 {
        return Err(bad());
    }
    let data = buf[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Raster { width: w, height: h, data })
}
