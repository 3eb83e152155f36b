//! Deterministic synthetic test instance: a piecewise-smooth grayscale scene
//! and a two-segment motion kernel.

use crate::error::Result;
use crate::tensor::{BlurKernel, ImageTensor};

pub const BENCH_SIZE: usize = 64;
pub const BENCH_KERNEL_SIZE: usize = 9;

/// Rectangles, a disc, a ring, stripes and a shallow gradient on `size × size`.
pub fn benchmark_image(size: usize) -> Result<ImageTensor> {
    let s = size as f64;
    ImageTensor::from_fn(size, size, 1, |_, y, x| {
        let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        let mut val = 0.25 + 0.15 * u;
        if (0.12..0.45).contains(&u) && (0.1..0.38).contains(&v) {
            val = 0.85;
        }
        let d = ((u - 0.68).powi(2) + (v - 0.3).powi(2)).sqrt();
        if d < 0.17 {
            val = 0.1;
        } else if d < 0.22 {
            val = 0.7;
        }
        if (0.55..0.9).contains(&v) && (0.1..0.5).contains(&u) && ((u * 12.0) as i64) % 2 == 0 {
            val = 0.95;
        }
        if v > 0.6 && u > 0.6 && u + v > 1.45 {
            val = 0.55;
        }
        val
    })
}

/// Anti-aliased polyline through `points` (row, column) rasterized on a
/// `size × size` grid and normalized to unit mass.
pub fn polyline_kernel(size: usize, points: &[(f64, f64)]) -> Result<BlurKernel> {
    let mut w = vec![0.0; size * size];
    for seg in points.windows(2) {
        let ((r0, c0), (r1, c1)) = (seg[0], seg[1]);
        let len = ((r1 - r0).powi(2) + (c1 - c0).powi(2)).sqrt();
        let samples = (len * 50.0).ceil().max(1.0) as usize;
        for i in 0..samples {
            let f = (i as f64 + 0.5) / samples as f64;
            let (r, c) = (r0 + f * (r1 - r0), c0 + f * (c1 - c0));
            let (ri, ci) = (r.floor(), c.floor());
            let (fr, fc) = (r - ri, c - ci);
            for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
                    let (rr, cc) = (ri as isize + dr, ci as isize + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < size && (cc as usize) < size {
                        w[rr as usize * size + cc as usize] += wr * wc * len / samples as f64;
                    }
                }
            }
        }
    }
    BlurKernel::normalized(size, w)
}

/// The 9×9 benchmark motion kernel: an L-ish stroke with a bend.
pub fn benchmark_kernel() -> Result<BlurKernel> {
    polyline_kernel(BENCH_KERNEL_SIZE, &[(1.5, 1.0), (5.0, 4.5), (6.5, 7.5)])
}
