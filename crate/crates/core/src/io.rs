//! Raster file formats.
//!
//! `RF32` is the raw float raster format: the magic bytes `RF32`, the height
//! and width as little-endian `u32`, then `H*W` little-endian `f32` values in
//! row-major order. Binary masks are exchanged as 8-bit grayscale PNG
//! (0 / 255) and imagery as 8-bit RGB PNG.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::raster::{BinaryMask, Grid, GridShape, RasterError};

pub const RF32_MAGIC: &[u8; 4] = b"RF32";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not an RF32 raster (bad magic)")]
    BadMagic,
    #[error("RF32 payload truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("image decode failed: {0}")]
    Decode(#[from] image::ImageError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub fn encode_rf32(grid: &Grid<f64>) -> Vec<u8> {
    let shape = grid.shape();
    let mut out = Vec::with_capacity(12 + 4 * shape.len());
    out.extend_from_slice(RF32_MAGIC);
    out.extend_from_slice(&(shape.height as u32).to_le_bytes());
    out.extend_from_slice(&(shape.width as u32).to_le_bytes());
    for &v in grid.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_rf32(bytes: &[u8]) -> Result<Grid<f64>, FormatError> {
    if bytes.len() < 12 || &bytes[..4] != RF32_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let shape = GridShape::new(height, width)?;
    let expected = 12 + 4 * shape.len();
    if bytes.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Grid::from_vec(shape, values)?)
}

fn encode_png<P>(img: &image::ImageBuffer<P, Vec<u8>>) -> Vec<u8>
where
    P: image::PixelWithColorType<Subpixel = u8>,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

pub fn encode_mask_png(mask: &BinaryMask) -> Vec<u8> {
    let shape = mask.shape();
    let img = GrayImage::from_fn(shape.width as u32, shape.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    encode_png(&img)
}

/// Decodes a grayscale PNG; any nonzero pixel is set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask, FormatError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma8();
    let shape = GridShape::new(img.height() as usize, img.width() as usize)?;
    Ok(BinaryMask::new(
        shape,
        img.pixels().map(|p| p.0[0] > 0).collect(),
    )?)
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    encode_png(img)
}

/// Decodes input imagery, converting to 8-bit RGB.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage, FormatError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_rgb8();
    GridShape::new(img.height() as usize, img.width() as usize)?;
    Ok(img)
}

pub fn image_shape(img: &RgbImage) -> GridShape {
    GridShape {
        height: img.height() as usize,
        width: img.width() as usize,
    }
}

pub fn crop_rgb(img: &RgbImage, row0: usize, col0: usize, height: usize, width: usize) -> RgbImage {
    image::imageops::crop_imm(img, col0 as u32, row0 as u32, width as u32, height as u32).to_image()
}

/// Renders a `[0, 1]` raster as a heatmap PNG, dark for 0 and bright for 1.
pub fn encode_heatmap_png(grid: &Grid<f64>) -> Vec<u8> {
    // viridis control points
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let shape = grid.shape();
    let img = RgbImage::from_fn(shape.width as u32, shape.height as u32, |x, y| {
        let v = grid.get(y as usize, x as usize).clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
        let i = (v.floor() as usize).min(STOPS.len() - 2);
        let t = v - i as f64;
        let mut px = [0u8; 3];
        for (k, out) in px.iter_mut().enumerate() {
            *out = (STOPS[i][k] * (1.0 - t) + STOPS[i + 1][k] * t).round() as u8;
        }
        Rgb(px)
    });
    encode_png(&img)
}
