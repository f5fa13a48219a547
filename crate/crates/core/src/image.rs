//! Grayscale images on the unit scale, additive noise, patch extraction and
//! PSNR.
//!
//! Images are H×W matrices with entry (row, column) = pixel / 255.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::SignalBatch;

/// Decodes an 8-bit grayscale image (PGM, PNG, or anything else the `image`
/// crate recognises). Colour and 16-bit images are rejected.
pub fn load_image_gray(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok(DMatrix::from_fn(h as usize, w as usize, |r, c| {
                f64::from(buf.get_pixel(c as u32, r as u32)[0]) / 255.0
            }))
        }
        other => Err(Error::Format(format!("expected 8-bit grayscale, found {:?}", other.color()))),
    }
}

/// Decodes headerless 8-bit pixels stored row by row.
pub fn load_raw_gray(path: impl AsRef<Path>, height: usize, width: usize) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path)?;
    raw_gray_from_bytes(&bytes, height, width)
}

pub fn raw_gray_from_bytes(bytes: &[u8], height: usize, width: usize) -> Result<DMatrix<f64>> {
    if bytes.len() != height * width {
        return Err(Error::Format(format!(
            "raw image has {} bytes, expected {height}×{width}",
            bytes.len()
        )));
    }
    Ok(DMatrix::from_fn(height, width, |r, c| f64::from(bytes[r * width + c]) / 255.0))
}

/// Writes an image as binary PGM, rounding and clamping to 0..=255.
pub fn save_pgm(path: impl AsRef<Path>, img: &DMatrix<f64>) -> Result<()> {
    let (h, w) = img.shape();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([(img[(r as usize, c as usize)] * 255.0).round().clamp(0.0, 255.0) as u8])
    });
    buf.save_with_format(path, image::ImageFormat::Pnm)?;
    Ok(())
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma`/255 to every
/// pixel, `sigma` being given on the 0–255 scale. Values are not clipped.
pub fn add_image_noise<R: Rng + ?Sized>(img: &DMatrix<f64>, sigma: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", "must be nonnegative"));
    }
    let std = sigma / 255.0;
    let mut out = img.clone();
    if std > 0.0 {
        // column-major traversal
        for v in out.iter_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_side: usize,
    pub stride: usize,
    pub remove_mean: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_side: 8,
            stride: 1,
            remove_mean: true,
        }
    }
}

/// All p×p patches with the given stride, top-left corners in row-major
/// order, each vectorised column by column.
pub fn extract_patches(img: &DMatrix<f64>, cfg: &PatchConfig) -> Result<SignalBatch> {
    let p = cfg.patch_side;
    let (h, w) = img.shape();
    if p == 0 || cfg.stride == 0 {
        return Err(invalid("patch_side", "patch side and stride must be positive"));
    }
    if p > h || p > w {
        return Err(Error::Domain(format!("{h}×{w} image is smaller than {p}×{p} patches")));
    }
    let rows = (h - p) / cfg.stride + 1;
    let cols = (w - p) / cfg.stride + 1;
    let d = p * p;
    let mut signals = DMatrix::zeros(d, rows * cols);
    signals
        .as_mut_slice()
        .par_chunks_mut(d * cols)
        .enumerate()
        .for_each(|(i, band)| {
            let r0 = i * cfg.stride;
            for (j, patch) in band.chunks_mut(d).enumerate() {
                let c0 = j * cfg.stride;
                for c in 0..p {
                    for r in 0..p {
                        patch[c * p + r] = img[(r0 + r, c0 + c)];
                    }
                }
                if cfg.remove_mean {
                    let mean = patch.iter().sum::<f64>() / d as f64;
                    patch.iter_mut().for_each(|v| *v -= mean);
                }
            }
        });
    Ok(SignalBatch::from_matrix(signals))
}

/// 10·log10(1/MSE) on the unit scale; +∞ for identical images.
pub fn psnr(clean: &DMatrix<f64>, other: &DMatrix<f64>) -> Result<f64> {
    if clean.shape() != other.shape() {
        return Err(Error::Domain(format!(
            "image shapes differ: {:?} vs {:?}",
            clean.shape(),
            other.shape()
        )));
    }
    if clean.is_empty() {
        return Err(Error::Domain("empty image".into()));
    }
    let mse = (clean - other).norm_squared() / clean.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}
