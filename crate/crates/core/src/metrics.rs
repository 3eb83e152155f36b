//! Image and kernel quality metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{BlurKernel, ImageTensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    /// Decibels; `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub kernel_similarity: Option<f64>,
}

impl MetricReport {
    pub fn compute(
        reference: &ImageTensor,
        estimate: &ImageTensor,
        kernels: Option<(&BlurKernel, &BlurKernel)>,
    ) -> Result<Self> {
        Ok(Self {
            psnr: psnr(reference, estimate)?,
            ssim: ssim(reference, estimate)?,
            kernel_similarity: kernels.map(|(t, e)| kernel_similarity(t, e)),
        })
    }
}

fn check_shapes(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::dimension(format!(
            "metric operands differ in shape: {} vs {}",
            a.shape_string(),
            b.shape_string()
        )))
    }
}

/// `10·log10(1 / MSE)` over all samples, peak value 1.
pub fn psnr(reference: &ImageTensor, estimate: &ImageTensor) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let mse = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_taps() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `C1 = 0.01²`, `C2 = 0.03²`, dynamic range 1, evaluated where the window fits
/// entirely inside the image and averaged over channels.
pub fn ssim(reference: &ImageTensor, estimate: &ImageTensor) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let (h, w) = (reference.height(), reference.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..reference.channels() {
        let a = reference.plane(c);
        let b = estimate.plane(c);
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(a, h, w, &taps);
        let mu_b = filter_valid(b, h, w, &taps);
        let e_aa = filter_valid(&aa, h, w, &taps);
        let e_bb = filter_valid(&bb, h, w, &taps);
        let e_ab = filter_valid(&ab, h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / reference.channels() as f64)
}

fn pad_centered(kernel: &BlurKernel, size: usize) -> Vec<f64> {
    let k = kernel.size();
    let off = (size - k) / 2;
    let mut out = vec![0.0; size * size];
    for r in 0..k {
        for c in 0..k {
            out[(r + off) * size + c + off] = kernel.get(r, c);
        }
    }
    out
}

/// Maximum normalized cross-correlation over all cyclic 2D shifts.
///
/// The smaller kernel is zero-padded (centered) to the larger size. Blind
/// deconvolution recovers kernels only up to translation, hence the shift search.
pub fn kernel_similarity(k_true: &BlurKernel, k_est: &BlurKernel) -> f64 {
    let size = k_true.size().max(k_est.size());
    let a = pad_centered(k_true, size);
    let b = pad_centered(k_est, size);
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt() * b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let mut best = 0.0_f64;
    for dy in 0..size {
        for dx in 0..size {
            let mut acc = 0.0;
            for y in 0..size {
                let by = (y + dy) % size;
                for x in 0..size {
                    acc += a[y * size + x] * b[by * size + (x + dx) % size];
                }
            }
            best = best.max(acc);
        }
    }
    (best / norm).clamp(0.0, 1.0)
}
