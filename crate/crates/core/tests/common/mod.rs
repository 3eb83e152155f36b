//! Reference implementations written as plain loops, shared by the test targets.
#![allow(dead_code)]

pub mod gradcheck;

use deblur_sdi::forward_model::BoundaryMode;
use deblur_sdi::rng;
use deblur_sdi::{BlurKernel, ImageTensor};

pub fn random_image(seed: u64, h: usize, w: usize, c: usize) -> ImageTensor {
    let mut r = rng::stream(seed);
    let v = rng::uniform_symmetric(&mut r, 0.5, h * w * c);
    ImageTensor::new(h, w, c, v.iter().map(|x| x + 0.5).collect()).unwrap()
}

pub fn random_kernel(seed: u64, k: usize) -> BlurKernel {
    let mut r = rng::stream(seed);
    let v = rng::uniform_symmetric(&mut r, 0.5, k * k);
    BlurKernel::normalized(k, v.iter().map(|x| x + 0.5).collect()).unwrap()
}

fn wrap(i: isize, n: usize, boundary: BoundaryMode) -> usize {
    let n = n as isize;
    match boundary {
        BoundaryMode::Circular => i.rem_euclid(n) as usize,
        BoundaryMode::Reflect => {
            // mirror without repeating the edge sample: -1 -> 1, n -> n-2
            let mut i = i;
            loop {
                if i < 0 {
                    i = -i;
                } else if i >= n {
                    i = 2 * (n - 1) - i;
                } else {
                    return i as usize;
                }
            }
        }
    }
}

/// `out[y,x] = Σ_{a,b} k[a,b] · img[y − (a − c), x − (b − c)]`, literal nested loops.
pub fn brute_convolve(image: &ImageTensor, kernel: &BlurKernel, boundary: BoundaryMode) -> Vec<f64> {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let k = kernel.size();
    let c = (k / 2) as isize;
    let mut out = vec![0.0; h * w * ch];
    for z in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        let sy = wrap(y as isize - (a as isize - c), h, boundary);
                        let sx = wrap(x as isize - (b as isize - c), w, boundary);
                        acc += kernel.get(a, b) * image.get(z, sy, sx);
                    }
                }
                out[(z * h + y) * w + x] = acc;
            }
        }
    }
    out
}

pub fn brute_psnr(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a.data()[i] - b.data()[i]).powi(2);
    }
    10.0 * (1.0 / (se / a.len() as f64)).log10()
}

/// SSIM with an explicit 11×11 window evaluated at every valid position.
pub fn brute_ssim(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = (a.height(), a.width());
    let mut acc = 0.0;
    for ch in 0..a.channels() {
        let mut sum = 0.0;
        let mut count = 0;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = win[i][j] / total;
                        let (p, q) = (a.get(ch, y + i, x + j), b.get(ch, y + i, x + j));
                        ma += g * p;
                        mb += g * q;
                        saa += g * p * p;
                        sbb += g * q * q;
                        sab += g * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += sum / count as f64;
    }
    acc / a.channels() as f64
}

pub fn read_golden(name: &str) -> Vec<Vec<String>> {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{path}: {e}"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
