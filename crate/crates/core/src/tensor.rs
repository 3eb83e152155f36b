//! Image and kernel containers.

use crate::error::{Error, Result};

/// A real-valued `H×W×C` image.
///
/// Samples are stored channel-planar: `data[c * H * W + y * W + x]`. Values of
/// images loaded from disk or produced by the denoiser lie in `[0, 1]`; noisy
/// intermediates are unconstrained but always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation("image must have non-zero height and width"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::validation(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::dimension(format!(
                "{} samples for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("image contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds an image from a closure over `(channel, y, x)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Internal constructor for buffers already known to be well-formed.
    pub(crate) fn from_parts(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub fn clamped(&self) -> ImageTensor {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::from_parts(self.height, self.width, self.channels, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ImageTensor> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Splits into single-channel images.
    pub fn channel_images(&self) -> Vec<ImageTensor> {
        (0..self.channels)
            .map(|c| Self::from_parts(self.height, self.width, 1, self.plane(c).to_vec()))
            .collect()
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// A normalized, non-negative `K×K` point-spread function with odd `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

/// Tolerance on the unit-sum invariant.
pub const KERNEL_SUM_TOLERANCE: f64 = 1e-6;

impl BlurKernel {
    /// Validates weights as-is: odd size, non-negative entries, unit sum.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        check_kernel_size(size)?;
        if weights.len() != size * size {
            return Err(Error::dimension(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::validation(format!(
                "kernel weights must be finite and non-negative, found {w}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "kernel weights must sum to 1, sum is {sum}"
            )));
        }
        Ok(Self { size, weights })
    }

    /// Divides by the total so the kernel sums to one.
    pub fn normalized(size: usize, mut weights: Vec<f64>) -> Result<Self> {
        check_kernel_size(size)?;
        if weights.len() != size * size {
            return Err(Error::dimension(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation(
                "kernel weights must be finite and non-negative",
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::validation("kernel weights sum to zero"));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self { size, weights })
    }

    /// The identity kernel: one at the center, zero elsewhere.
    pub fn delta(size: usize) -> Result<Self> {
        check_kernel_size(size)?;
        let mut weights = vec![0.0; size * size];
        weights[(size / 2) * size + size / 2] = 1.0;
        Ok(Self { size, weights })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        check_kernel_size(size)?;
        let n = (size * size) as f64;
        Ok(Self {
            size,
            weights: vec![1.0 / n; size * size],
        })
    }

    pub(crate) fn from_parts(size: usize, weights: Vec<f64>) -> Self {
        Self { size, weights }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn center(&self) -> usize {
        self.size / 2
    }

    /// Row/column of the largest weight (first one on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        (best / self.size, best % self.size)
    }
}

pub(crate) fn check_kernel_size(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::validation(format!(
            "kernel size must be an odd positive integer, got {size}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_channel_counts_and_lengths() {
        assert!(ImageTensor::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(matches!(
            ImageTensor::new(2, 2, 1, vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(ImageTensor::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn planar_indexing() {
        let img = ImageTensor::from_fn(2, 3, 3, |c, y, x| (c * 100 + y * 10 + x) as f64).unwrap();
        assert_eq!(img.get(2, 1, 2), 212.0);
        assert_eq!(img.plane(1)[4], 111.0);
    }

    #[test]
    fn kernel_invariants_enforced() {
        assert!(BlurKernel::new(2, vec![0.25; 4]).is_err());
        assert!(BlurKernel::new(1, vec![-1.0]).is_err());
        assert!(BlurKernel::new(3, vec![0.1; 9]).is_err());
        let k = BlurKernel::normalized(3, vec![2.0; 9]).unwrap();
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let d = BlurKernel::delta(5).unwrap();
        assert_eq!(d.argmax(), (2, 2));
    }
}
