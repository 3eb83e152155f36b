//! Row/column 2D FFT over planar buffers.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse transform, normalized, keeping the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex<f64>>) -> Vec<f64> {
        self.transform(&mut spectrum, true);
        let scale = 1.0 / (self.height * self.width) as f64;
        spectrum.iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process(buf);
        let mut column = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            cols.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    }
}

/// Embeds a `K×K` kernel into an `H×W` grid with its center at the origin.
pub(crate) fn embed_kernel(weights: &[f64], size: usize, height: usize, width: usize) -> Vec<f64> {
    let c = (size / 2) as isize;
    let mut grid = vec![0.0; height * width];
    for a in 0..size {
        let gy = (a as isize - c).rem_euclid(height as isize) as usize;
        for b in 0..size {
            let gx = (b as isize - c).rem_euclid(width as isize) as usize;
            grid[gy * width + gx] += weights[a * size + b];
        }
    }
    grid
}
