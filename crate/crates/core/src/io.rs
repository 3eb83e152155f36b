//! File formats: 8-bit PNG images and plain-text kernels.
//!
//! Kernel text format: the first line holds `K`, followed by `K` rows of `K`
//! whitespace-separated decimals. Loading renormalizes to unit sum and rejects
//! entries below `-1e-9` (small negatives from rounding are clipped to zero).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{BlurKernel, ImageTensor};

const NEGATIVE_WEIGHT_TOLERANCE: f64 = -1e-9;

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = matches!(
        decoded,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let img = decoded.to_luma8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        ImageTensor::new(h as usize, w as usize, 1, data)
    } else {
        let img = decoded.to_rgb8();
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let raw = img.as_raw();
        ImageTensor::from_fn(h, w, 3, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 255.0)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (image.height() as u32, image.width() as u32);
    let result = if image.channels() == 1 {
        let buf: GrayImage =
            ImageBuffer::from_fn(w, h, |x, y| Luma([quantize(image.get(0, y as usize, x as usize))]));
        buf.save(path)
    } else {
        let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([
                quantize(image.get(0, y, x)),
                quantize(image.get(1, y, x)),
                quantize(image.get(2, y, x)),
            ])
        });
        buf.save(path)
    };
    result.map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn parse_kernel(text: &str, path: &Path) -> Result<BlurKernel> {
    let bad = |message: String| Error::Parse {
        what: "kernel file",
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let size: usize = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .trim()
        .parse()
        .map_err(|e| bad(format!("kernel size: {e}")))?;
    let mut weights = Vec::with_capacity(size * size);
    for row in 0..size {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("expected {size} rows, found {row}")))?;
        let before = weights.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| bad(format!("row {row}: '{tok}': {e}")))?;
            if v < NEGATIVE_WEIGHT_TOLERANCE || !v.is_finite() {
                return Err(bad(format!("row {row}: invalid weight {v}")));
            }
            weights.push(v.max(0.0));
        }
        if weights.len() - before != size {
            return Err(bad(format!(
                "row {row} has {} entries, expected {size}",
                weights.len() - before
            )));
        }
    }
    if lines.next().is_some() {
        return Err(bad(format!("more than {size} rows")));
    }
    BlurKernel::normalized(size, weights)
}

pub fn load_kernel(path: impl AsRef<Path>) -> Result<BlurKernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel(&text, path)
}

/// Text form of a kernel; values are written with round-trip precision.
pub fn format_kernel(kernel: &BlurKernel) -> String {
    let k = kernel.size();
    let mut out = format!("{k}\n");
    for row in kernel.weights().chunks(k) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn save_kernel(kernel: &BlurKernel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_kernel(kernel)).map_err(|e| Error::io(path, e))
}

/// Grayscale visualization: max-normalized to 255 and upscaled by nearest neighbour.
pub fn kernel_display(kernel: &BlurKernel, scale: usize) -> GrayImage {
    let k = kernel.size();
    let max = kernel.weights().iter().cloned().fold(0.0_f64, f64::max);
    let norm = if max > 0.0 { 1.0 / max } else { 0.0 };
    let side = (k * scale.max(1)) as u32;
    ImageBuffer::from_fn(side, side, |x, y| {
        let (r, c) = (y as usize / scale.max(1), x as usize / scale.max(1));
        Luma([quantize(kernel.get(r, c) * norm)])
    })
}

pub fn save_kernel_png(kernel: &BlurKernel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let scale = (256 / kernel.size()).max(1);
    kernel_display(kernel, scale)
        .save(path)
        .map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
