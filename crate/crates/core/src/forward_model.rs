//! Blur degradation model `y = x ⊛ k + n`.
//!
//! Convolution here is true convolution (the kernel is flipped), applied
//! independently to each channel with "same" output size:
//!
//! `out[y, x] = Σ_{a,b} k[a, b] · img[y + c − a, x + c − b]`, `c = K / 2`,
//!
//! with out-of-range source indices resolved by the [`BoundaryMode`].

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{embed_kernel, Fft2};
use crate::rng;
use crate::tensor::{check_kernel_size, BlurKernel, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Periodic extension; enables the FFT path and preserves total mass.
    #[default]
    Circular,
    /// Mirror about the edge sample without repeating it (`… 2 1 | 0 1 2 …`).
    Reflect,
}

impl std::str::FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(Self::Circular),
            "reflect" => Ok(Self::Reflect),
            other => Err(Error::validation(format!("unknown boundary mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Circular => "circular",
            Self::Reflect => "reflect",
        })
    }
}

fn resolve(i: isize, n: usize, boundary: BoundaryMode) -> usize {
    let n = n as isize;
    match boundary {
        BoundaryMode::Circular => i.rem_euclid(n) as usize,
        BoundaryMode::Reflect => {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i.rem_euclid(period);
            (if m < n { m } else { period - m }) as usize
        }
    }
}

/// Precomputed source indices for one plane size and kernel size.
///
/// Shared by the forward convolution and both adjoints used in the loss gradient.
#[derive(Debug, Clone)]
pub(crate) struct ConvPlan {
    height: usize,
    width: usize,
    ksize: usize,
    /// `rows[y * K + a]` = source row for output row `y` and kernel row `a`.
    rows: Vec<usize>,
    /// `cols[b * W + x]` = source column for output column `x` and kernel column `b`.
    cols: Vec<usize>,
}

impl ConvPlan {
    pub fn new(height: usize, width: usize, ksize: usize, boundary: BoundaryMode) -> Result<Self> {
        check_kernel_size(ksize)?;
        if ksize > height.min(width) {
            return Err(Error::dimension(format!(
                "kernel size {ksize} exceeds image size {height}x{width}"
            )));
        }
        let c = (ksize / 2) as isize;
        let mut rows = Vec::with_capacity(height * ksize);
        for y in 0..height {
            for a in 0..ksize {
                rows.push(resolve(y as isize + c - a as isize, height, boundary));
            }
        }
        let mut cols = Vec::with_capacity(width * ksize);
        for b in 0..ksize {
            for x in 0..width {
                cols.push(resolve(x as isize + c - b as isize, width, boundary));
            }
        }
        Ok(Self {
            height,
            width,
            ksize,
            rows,
            cols,
        })
    }

    pub fn forward(&self, src: &[f64], kernel: &[f64], out: &mut [f64]) {
        let (w, k) = (self.width, self.ksize);
        out.iter_mut().for_each(|v| *v = 0.0);
        for y in 0..self.height {
            let out_row = &mut out[y * w..(y + 1) * w];
            for a in 0..k {
                let src_row = &src[self.rows[y * k + a] * w..][..w];
                for b in 0..k {
                    let kv = kernel[a * k + b];
                    if kv == 0.0 {
                        continue;
                    }
                    let cols = &self.cols[b * w..(b + 1) * w];
                    for (o, &sx) in out_row.iter_mut().zip(cols) {
                        *o += kv * src_row[sx];
                    }
                }
            }
        }
    }

    /// Adjoint with respect to the source plane, accumulated into `grad_src`.
    pub fn adjoint_source(&self, grad_out: &[f64], kernel: &[f64], grad_src: &mut [f64]) {
        let (w, k) = (self.width, self.ksize);
        for y in 0..self.height {
            let g_row = &grad_out[y * w..(y + 1) * w];
            for a in 0..k {
                let base = self.rows[y * k + a] * w;
                for b in 0..k {
                    let kv = kernel[a * k + b];
                    let cols = &self.cols[b * w..(b + 1) * w];
                    for (g, &sx) in g_row.iter().zip(cols) {
                        grad_src[base + sx] += kv * g;
                    }
                }
            }
        }
    }

    /// Adjoint with respect to the kernel, accumulated into `grad_kernel`.
    pub fn adjoint_kernel(&self, grad_out: &[f64], src: &[f64], grad_kernel: &mut [f64]) {
        let (w, k) = (self.width, self.ksize);
        for y in 0..self.height {
            let g_row = &grad_out[y * w..(y + 1) * w];
            for a in 0..k {
                let src_row = &src[self.rows[y * k + a] * w..][..w];
                for b in 0..k {
                    let cols = &self.cols[b * w..(b + 1) * w];
                    let acc: f64 = g_row.iter().zip(cols).map(|(g, &sx)| g * src_row[sx]).sum();
                    grad_kernel[a * k + b] += acc;
                }
            }
        }
    }
}

/// Direct spatial convolution of every channel with `kernel`.
pub fn convolve_direct(
    image: &ImageTensor,
    kernel: &BlurKernel,
    boundary: BoundaryMode,
) -> Result<ImageTensor> {
    let plan = ConvPlan::new(image.height(), image.width(), kernel.size(), boundary)?;
    let n = image.height() * image.width();
    let mut out = vec![0.0; image.len()];
    for c in 0..image.channels() {
        plan.forward(image.plane(c), kernel.weights(), &mut out[c * n..(c + 1) * n]);
    }
    Ok(ImageTensor::from_parts(
        image.height(),
        image.width(),
        image.channels(),
        out,
    ))
}

/// Circular convolution through the frequency domain.
pub fn convolve_fft(image: &ImageTensor, kernel: &BlurKernel) -> Result<ImageTensor> {
    let (h, w) = (image.height(), image.width());
    // same preconditions as the direct path
    ConvPlan::new(h, w, kernel.size(), BoundaryMode::Circular)?;
    let fft = Fft2::new(h, w);
    let kspec = fft.forward_real(&embed_kernel(kernel.weights(), kernel.size(), h, w));
    let mut out = Vec::with_capacity(image.len());
    for c in 0..image.channels() {
        let spec: Vec<Complex<f64>> = fft
            .forward_real(image.plane(c))
            .iter()
            .zip(&kspec)
            .map(|(a, b)| a * b)
            .collect();
        out.extend(fft.inverse_real(spec));
    }
    Ok(ImageTensor::from_parts(h, w, image.channels(), out))
}

/// Blurs with `boundary` then adds seeded Gaussian noise and clamps to `[0, 1]`.
pub fn synthesize_observation(
    sharp: &ImageTensor,
    kernel: &BlurKernel,
    boundary: BoundaryMode,
    noise_std: f64,
    seed: u64,
) -> Result<ImageTensor> {
    if noise_std < 0.0 || !noise_std.is_finite() {
        return Err(Error::validation(format!(
            "noise standard deviation must be finite and non-negative, got {noise_std}"
        )));
    }
    if !sharp.in_unit_range() {
        return Err(Error::validation("sharp image must lie in [0, 1]"));
    }
    let blurred = convolve_direct(sharp, kernel, boundary)?;
    if noise_std == 0.0 {
        return Ok(blurred.clamped());
    }
    let noise = rng::gaussian(seed, blurred.len());
    let data = blurred
        .data()
        .iter()
        .zip(&noise)
        .map(|(v, e)| (v + noise_std * e).clamp(0.0, 1.0))
        .collect();
    Ok(ImageTensor::from_parts(
        sharp.height(),
        sharp.width(),
        sharp.channels(),
        data,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, c, |ch, y, x| ((ch * 7 + y * 3 + x * 5) % 11) as f64 / 10.0)
            .unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let img = ramp(5, 7, 3);
        let k = BlurKernel::new(1, vec![1.0]).unwrap();
        for mode in [BoundaryMode::Circular, BoundaryMode::Reflect] {
            assert_eq!(convolve_direct(&img, &k, mode).unwrap(), img);
        }
    }

    #[test]
    fn constant_image_fixed_point() {
        let img = ImageTensor::filled(3, 3, 1, 0.5).unwrap();
        let out = convolve_direct(&img, &BlurKernel::uniform(3).unwrap(), BoundaryMode::Circular)
            .unwrap();
        for v in out.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let out = convolve_fft(&img, &BlurKernel::uniform(3).unwrap()).unwrap();
        for v in out.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_delta_is_identity() {
        let img = ramp(6, 9, 1);
        let out = convolve_fft(&img, &BlurKernel::delta(5).unwrap()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_even_and_oversized_kernels() {
        let img = ramp(4, 4, 1);
        let big = BlurKernel::uniform(5).unwrap();
        assert!(matches!(
            convolve_direct(&img, &big, BoundaryMode::Circular),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(convolve_fft(&img, &big), Err(Error::Dimension(_))));
        assert!(matches!(
            ConvPlan::new(8, 8, 4, BoundaryMode::Circular),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn reflect_indexing() {
        let idx: Vec<usize> = (-3..7).map(|i| resolve(i, 4, BoundaryMode::Reflect)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn synthesis_rejects_negative_noise() {
        let img = ramp(4, 4, 1);
        let k = BlurKernel::delta(3).unwrap();
        assert!(synthesize_observation(&img, &k, BoundaryMode::Circular, -0.1, 0).is_err());
        let clean = synthesize_observation(&img, &k, BoundaryMode::Circular, 0.0, 0).unwrap();
        assert_eq!(clean, img);
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <A x, g> == <x, Aᵀ g> for both the source and the kernel adjoint
        for mode in [BoundaryMode::Circular, BoundaryMode::Reflect] {
            let (h, w, k) = (7, 9, 5);
            let plan = ConvPlan::new(h, w, k, mode).unwrap();
            let src = rng::gaussian(1, h * w);
            let ker = rng::gaussian(2, k * k);
            let g = rng::gaussian(3, h * w);
            let mut out = vec![0.0; h * w];
            plan.forward(&src, &ker, &mut out);
            let lhs: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut gs = vec![0.0; h * w];
            plan.adjoint_source(&g, &ker, &mut gs);
            let rhs: f64 = src.iter().zip(&gs).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{mode}: {lhs} vs {rhs}");
            let mut gk = vec![0.0; k * k];
            plan.adjoint_kernel(&g, &src, &mut gk);
            let rhs: f64 = ker.iter().zip(&gk).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{mode}: {lhs} vs {rhs}");
        }
    }
}
