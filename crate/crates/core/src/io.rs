//! PNG / PGM reading and writing.
//!
//! Ground-truth images follow the DIBCO convention: dark pixels are ink,
//! light pixels background, and mid-gray marks unknown pixels.

use std::path::Path;

use image::{DynamicImage, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::grid::{Dims, GrayImage};
use crate::metrics::BinaryImage;

/// Luminance weights for RGB input.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Ground-truth pixels below this value are foreground.
pub const GT_FG_BELOW: u8 = 64;
/// Ground-truth pixels above this value are background.
pub const GT_BG_ABOVE: u8 = 191;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn to_gray_values(img: &DynamicImage, weights: [f64; 3]) -> (Dims, Vec<f64>) {
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    let data = if img.color().has_color() {
        img.to_rgb32f()
            .pixels()
            .map(|p| {
                let v = weights[0] * p[0] as f64 + weights[1] * p[1] as f64 + weights[2] * p[2] as f64;
                v.clamp(0.0, 1.0)
            })
            .collect()
    } else {
        img.to_luma32f().pixels().map(|p| (p[0] as f64).clamp(0.0, 1.0)).collect()
    };
    (dims, data)
}

/// Reads an image as gray values in `[0, 1]`, converting colour input with
/// `weights`.
pub fn load_gray_with(path: &Path, weights: [f64; 3]) -> Result<GrayImage> {
    let img = open(path)?;
    let (dims, data) = to_gray_values(&img, weights);
    GrayImage::new(dims, data)
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    load_gray_with(path, LUMA_WEIGHTS)
}

/// Reads a ground-truth image. Returns the foreground mask and the
/// validity mask (false for unknown pixels).
pub fn load_ground_truth(path: &Path) -> Result<(BinaryImage, Vec<bool>)> {
    let img = open(path)?.to_luma8();
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    let mut fg = Vec::with_capacity(dims.len());
    let mut known = Vec::with_capacity(dims.len());
    for p in img.pixels() {
        let v = p[0];
        fg.push(v < GT_FG_BELOW);
        known.push(v < GT_FG_BELOW || v > GT_BG_ABOVE);
    }
    Ok((BinaryImage::new(dims, fg)?, known))
}

/// Reads a binarised image, dark pixels being foreground.
pub fn load_binary(path: &Path) -> Result<BinaryImage> {
    let img = open(path)?.to_luma8();
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    BinaryImage::new(dims, img.pixels().map(|p| p[0] < 128).collect())
}

fn format_for(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(e) if e == "pgm" || e == "pnm" => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    }
}

fn save_luma(path: &Path, dims: Dims, pixels: impl Iterator<Item = u8>) -> Result<()> {
    let buf = image::ImageBuffer::<Luma<u8>, Vec<u8>>::from_vec(
        dims.width as u32,
        dims.height as u32,
        pixels.collect(),
    )
    .ok_or_else(|| Error::InvalidInput("pixel buffer size mismatch".into()))?;
    buf.save_with_format(path, format_for(path))
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// 8-bit gray; PGM for `.pgm`/`.pnm`, PNG otherwise.
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    save_luma(
        path,
        img.dims(),
        img.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    )
}

/// Foreground black (0), background white (255).
pub fn save_binary(path: &Path, img: &BinaryImage) -> Result<()> {
    save_luma(path, img.dims(), img.data().iter().map(|&fg| if fg { 0 } else { 255 }))
}
