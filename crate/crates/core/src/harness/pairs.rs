//! Synthetic blurred/sharp pair generation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::{synthesize_observation, BoundaryMode};
use crate::io;
use crate::rng;
use crate::tensor::{BlurKernel, ImageTensor};

pub const MANIFEST_NAME: &str = "manifest.csv";

/// One manifest row: `image,kernel,blurred,noise_std,seed`.
///
/// `blurred` is relative to the manifest directory and empty when the pair was
/// skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub kernel: String,
    pub blurred: String,
    pub noise_std: f64,
    pub seed: u64,
}

/// A generated pair held in memory.
#[derive(Debug, Clone)]
pub struct Pair {
    pub image_name: String,
    pub kernel_name: String,
    pub sharp: ImageTensor,
    pub kernel: BlurKernel,
    pub blurred: ImageTensor,
    pub seed: u64,
}

fn pair_seed(seed: u64, image_idx: usize, kernel_idx: usize) -> u64 {
    rng::derive_seed(seed, &[image_idx as u64, kernel_idx as u64])
}

/// Cartesian product of images × kernels, each blurred with its own noise seed.
pub fn build_pairs(
    images: &[(String, ImageTensor)],
    kernels: &[(String, BlurKernel)],
    noise_std: f64,
    seed: u64,
    boundary: BoundaryMode,
) -> Result<Vec<Pair>> {
    if images.is_empty() {
        return Err(Error::validation("no sharp images supplied"));
    }
    if kernels.is_empty() {
        return Err(Error::validation("no blur kernels supplied"));
    }
    let mut pairs = Vec::with_capacity(images.len() * kernels.len());
    for (i, (iname, sharp)) in images.iter().enumerate() {
        for (j, (kname, kernel)) in kernels.iter().enumerate() {
            let s = pair_seed(seed, i, j);
            pairs.push(Pair {
                image_name: iname.clone(),
                kernel_name: kname.clone(),
                sharp: sharp.clone(),
                kernel: kernel.clone(),
                blurred: synthesize_observation(sharp, kernel, boundary, noise_std, s)?,
                seed: s,
            });
        }
    }
    Ok(pairs)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into())
}

/// File-based variant: loads inputs, writes `blurred/*.png` and `manifest.csv`
/// under `out_dir`. Unreadable inputs are skipped with a warning and recorded
/// with an empty `blurred` field.
pub fn build_pairs_on_disk(
    image_paths: &[PathBuf],
    kernel_paths: &[PathBuf],
    noise_std: f64,
    seed: u64,
    boundary: BoundaryMode,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    if image_paths.is_empty() {
        return Err(Error::validation("no sharp images supplied"));
    }
    if kernel_paths.is_empty() {
        return Err(Error::validation("no blur kernels supplied"));
    }
    if noise_std < 0.0 || !noise_std.is_finite() {
        return Err(Error::validation(format!(
            "noise standard deviation must be finite and non-negative, got {noise_std}"
        )));
    }
    let blurred_dir = out_dir.join("blurred");
    fs::create_dir_all(&blurred_dir).map_err(|e| Error::io(&blurred_dir, e))?;
    let images: Vec<Result<ImageTensor>> = image_paths.iter().map(io::load_image).collect();
    let kernels: Vec<Result<BlurKernel>> = kernel_paths.iter().map(io::load_kernel).collect();
    let mut rows = Vec::new();
    for (i, (ipath, image)) in image_paths.iter().zip(&images).enumerate() {
        for (j, (kpath, kernel)) in kernel_paths.iter().zip(&kernels).enumerate() {
            let s = pair_seed(seed, i, j);
            let mut row = ManifestRow {
                image: ipath.display().to_string(),
                kernel: kpath.display().to_string(),
                blurred: String::new(),
                noise_std,
                seed: s,
            };
            let outcome = match (image, kernel) {
                (Ok(img), Ok(k)) => {
                    let name = format!("{}__{}.png", stem(ipath), stem(kpath));
                    synthesize_observation(img, k, boundary, noise_std, s)
                        .and_then(|b| io::save_image(&b, blurred_dir.join(&name)))
                        .map(|_| format!("blurred/{name}"))
                }
                (Err(e), _) | (_, Err(e)) => Err(Error::validation(e.to_string())),
            };
            match outcome {
                Ok(rel) => row.blurred = rel,
                Err(e) => log::warn!("skipping pair {} x {}: {e}", row.image, row.kernel),
            }
            rows.push(row);
        }
    }
    write_manifest(&out_dir.join(MANIFEST_NAME), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                what: "manifest",
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}
