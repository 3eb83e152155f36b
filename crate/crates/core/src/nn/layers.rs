//! Differentiable layers with explicit forward caches.
//!
//! Every layer exposes `forward`, returning its output together with whatever the
//! backward pass needs, and `backward`, which accumulates parameter gradients into
//! the owning [`ParamSet`] and returns the gradient with respect to its input.

use super::gemm::gemm;
use super::params::{ParamId, ParamSet};
use crate::rng::{self, StreamRng};

/// Channel-planar activations: `data[c * H * W + y * W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "feature map size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn zeros_like(other: &FeatureMap) -> Self {
        Self::zeros(other.channels, other.height, other.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Channel-wise concatenation `[a; b]`.
    pub fn concat(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
        assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial size");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        FeatureMap::new(a.channels + b.channels, a.height, a.width, data)
    }

    /// Inverse of [`FeatureMap::concat`] for gradients.
    pub fn split(self, first_channels: usize) -> (FeatureMap, FeatureMap) {
        let n = first_channels * self.pixels();
        let mut data = self.data;
        let rest = data.split_off(n);
        (
            FeatureMap::new(first_channels, self.height, self.width, data),
            FeatureMap::new(self.channels - first_channels, self.height, self.width, rest),
        )
    }
}

/// Fan-in scaled uniform initialization bound, `1 / sqrt(fan_in)`.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Fully connected

#[derive(Debug, Clone)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn new(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let bound = fan_in_bound(inputs);
        let w = rng::uniform_symmetric(rng, bound, inputs * outputs);
        let b = rng::uniform_symmetric(rng, bound, outputs);
        Self {
            inputs,
            outputs,
            weight: params.add(format!("{name}.weight"), vec![outputs, inputs], w),
            bias: params.add(format!("{name}.bias"), vec![outputs], b),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut y = params.value(self.bias).to_vec();
        gemm(self.outputs, self.inputs, 1, 1.0, params.value(self.weight), false, x, false, 1.0, &mut y);
        y
    }

    /// Accumulates `∂W += g xᵀ`, `∂b += g` and returns `Wᵀ g`.
    pub fn backward(&self, params: &mut ParamSet, x: &[f64], grad_out: &[f64]) -> Vec<f64> {
        for (gb, g) in params.grad_mut(self.bias).iter_mut().zip(grad_out) {
            *gb += g;
        }
        gemm(self.outputs, 1, self.inputs, 1.0, grad_out, false, x, false, 1.0, params.grad_mut(self.weight));
        let mut gx = vec![0.0; self.inputs];
        gemm(1, self.outputs, self.inputs, 1.0, grad_out, false, params.value(self.weight), false, 0.0, &mut gx);
        gx
    }
}

// ---------------------------------------------------------------------------
// 2D convolution (cross-correlation, zero padding k/2)

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub ksize: usize,
    pub stride: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    col: Vec<f64>,
    in_height: usize,
    in_width: usize,
    out_height: usize,
    out_width: usize,
}

impl Conv2d {
    pub(crate) fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        ksize: usize,
        stride: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let fan_in = in_channels * ksize * ksize;
        let bound = fan_in_bound(fan_in);
        let w = rng::uniform_symmetric(rng, bound, out_channels * fan_in);
        let b = rng::uniform_symmetric(rng, bound, out_channels);
        Self {
            in_channels,
            out_channels,
            ksize,
            stride,
            weight: params.add(
                format!("{name}.weight"),
                vec![out_channels, in_channels, ksize, ksize],
                w,
            ),
            bias: params.add(format!("{name}.bias"), vec![out_channels], b),
        }
    }

    fn out_size(&self, n: usize) -> usize {
        let pad = self.ksize / 2;
        (n + 2 * pad - self.ksize) / self.stride + 1
    }

    fn im2col(&self, x: &FeatureMap, oh: usize, ow: usize) -> Vec<f64> {
        let (k, s, pad) = (self.ksize, self.stride, (self.ksize / 2) as isize);
        let p = oh * ow;
        let mut col = vec![0.0; self.in_channels * k * k * p];
        for c in 0..self.in_channels {
            let plane = &x.data[c * x.pixels()..(c + 1) * x.pixels()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.width..][..x.width];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < x.width as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], cache: &ConvCache) -> FeatureMap {
        let (k, s, pad) = (self.ksize, self.stride, (self.ksize / 2) as isize);
        let (h, w, oh, ow) = (cache.in_height, cache.in_width, cache.out_height, cache.out_width);
        let p = oh * ow;
        let mut out = FeatureMap::zeros(self.in_channels, h, w);
        for c in 0..self.in_channels {
            let plane = &mut out.data[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..][..w];
                        for (ox, v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, params: &ParamSet, x: &FeatureMap) -> (FeatureMap, ConvCache) {
        assert_eq!(x.channels, self.in_channels, "conv input channels");
        let (oh, ow) = (self.out_size(x.height), self.out_size(x.width));
        let p = oh * ow;
        let col = self.im2col(x, oh, ow);
        let mut out = vec![0.0; self.out_channels * p];
        for (row, b) in out.chunks_mut(p).zip(params.value(self.bias)) {
            row.iter_mut().for_each(|v| *v = *b);
        }
        let fan_in = self.in_channels * self.ksize * self.ksize;
        gemm(self.out_channels, fan_in, p, 1.0, params.value(self.weight), false, &col, false, 1.0, &mut out);
        (
            FeatureMap::new(self.out_channels, oh, ow, out),
            ConvCache {
                col,
                in_height: x.height,
                in_width: x.width,
                out_height: oh,
                out_width: ow,
            },
        )
    }

    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &ConvCache,
        grad_out: &FeatureMap,
        need_input_grad: bool,
    ) -> Option<FeatureMap> {
        let p = cache.out_height * cache.out_width;
        let fan_in = self.in_channels * self.ksize * self.ksize;
        for (gb, row) in params.grad_mut(self.bias).iter_mut().zip(grad_out.data.chunks(p)) {
            *gb += row.iter().sum::<f64>();
        }
        gemm(self.out_channels, p, fan_in, 1.0, &grad_out.data, false, &cache.col, true, 1.0, params.grad_mut(self.weight));
        if !need_input_grad {
            return None;
        }
        let mut gcol = vec![0.0; fan_in * p];
        gemm(fan_in, self.out_channels, p, 1.0, params.value(self.weight), true, &grad_out.data, false, 0.0, &mut gcol);
        Some(self.col2im(&gcol, cache))
    }
}

// ---------------------------------------------------------------------------
// Per-channel normalization with learned scale and shift

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub channels: usize,
    pub scale: ParamId,
    pub shift: ParamId,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

impl ChannelNorm {
    pub(crate) fn new(params: &mut ParamSet, name: &str, channels: usize) -> Self {
        Self {
            channels,
            scale: params.add(format!("{name}.scale"), vec![channels], vec![1.0; channels]),
            shift: params.add(format!("{name}.shift"), vec![channels], vec![0.0; channels]),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &FeatureMap) -> (FeatureMap, NormCache) {
        let n = x.pixels();
        let mut normalized = vec![0.0; x.data.len()];
        let mut out = vec![0.0; x.data.len()];
        let mut inv_std = Vec::with_capacity(self.channels);
        let (scale, shift) = (params.value(self.scale), params.value(self.shift));
        for c in 0..self.channels {
            let plane = &x.data[c * n..(c + 1) * n];
            let mean = plane.iter().sum::<f64>() / n as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(is);
            for i in 0..n {
                let xh = (plane[i] - mean) * is;
                normalized[c * n + i] = xh;
                out[c * n + i] = scale[c] * xh + shift[c];
            }
        }
        (
            FeatureMap::new(x.channels, x.height, x.width, out),
            NormCache {
                normalized,
                inv_std,
            },
        )
    }

    pub fn backward(&self, params: &mut ParamSet, cache: &NormCache, grad_out: &FeatureMap) -> FeatureMap {
        let n = grad_out.pixels();
        let nf = n as f64;
        let mut gx = vec![0.0; grad_out.data.len()];
        let mut gscale = vec![0.0; self.channels];
        let mut gshift = vec![0.0; self.channels];
        let scale = params.value(self.scale);
        for c in 0..self.channels {
            let g = &grad_out.data[c * n..(c + 1) * n];
            let xh = &cache.normalized[c * n..(c + 1) * n];
            let sum_g: f64 = g.iter().sum();
            let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
            gscale[c] = sum_gx;
            gshift[c] = sum_g;
            let k = scale[c] * cache.inv_std[c] / nf;
            for i in 0..n {
                gx[c * n + i] = k * (nf * g[i] - sum_g - xh[i] * sum_gx);
            }
        }
        for (a, b) in params.grad_mut(self.scale).iter_mut().zip(&gscale) {
            *a += b;
        }
        for (a, b) in params.grad_mut(self.shift).iter_mut().zip(&gshift) {
            *a += b;
        }
        FeatureMap::new(grad_out.channels, grad_out.height, grad_out.width, gx)
    }
}

// ---------------------------------------------------------------------------
// Pointwise activations

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Relu6,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.1)
    }
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Activation::Relu => v.max(0.0),
            Activation::Relu6 => v.clamp(0.0, 6.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if pre > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Relu6 => {
                if pre > 0.0 && pre < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Conv → norm → activation

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: ChannelNorm,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache {
    conv: ConvCache,
    norm: NormCache,
    pre_activation: Vec<f64>,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        activation: Activation,
        rng: &mut StreamRng,
    ) -> Self {
        Self {
            conv: Conv2d::new(params, &format!("{name}.conv"), in_channels, out_channels, 3, stride, rng),
            norm: ChannelNorm::new(params, &format!("{name}.norm"), out_channels),
            activation,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &FeatureMap) -> (FeatureMap, ConvBlockCache) {
        let (c, conv) = self.conv.forward(params, x);
        let (mut n, norm) = self.norm.forward(params, &c);
        let pre_activation = n.data.clone();
        n.data.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        (
            n,
            ConvBlockCache {
                conv,
                norm,
                pre_activation,
            },
        )
    }

    pub fn backward(
        &self,
        params: &mut ParamSet,
        cache: &ConvBlockCache,
        grad_out: &FeatureMap,
        need_input_grad: bool,
    ) -> Option<FeatureMap> {
        let mut g = grad_out.clone();
        for (gv, pre) in g.data.iter_mut().zip(&cache.pre_activation) {
            *gv *= self.activation.derivative(*pre);
        }
        let g = self.norm.backward(params, &cache.norm, &g);
        self.conv.backward(params, &cache.conv, &g, need_input_grad)
    }
}

// ---------------------------------------------------------------------------
// Bilinear 2× upsampling (half-pixel centers, edge clamped)

fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let w1 = src - i0 as f64;
            (i0, i1, 1.0 - w1, w1)
        })
        .collect()
}

pub fn upsample_bilinear(x: &FeatureMap) -> FeatureMap {
    let (h, w) = (x.height, x.width);
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = FeatureMap::zeros(x.channels, oh, ow);
    let mut rows = vec![0.0; h * ow];
    for c in 0..x.channels {
        let src = &x.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for (ox, &(i0, i1, w0, w1)) in tx.iter().enumerate() {
                rows[y * ow + ox] = w0 * src[y * w + i0] + w1 * src[y * w + i1];
            }
        }
        let dst = &mut out.data[c * oh * ow..(c + 1) * oh * ow];
        for (oy, &(i0, i1, w0, w1)) in ty.iter().enumerate() {
            for ox in 0..ow {
                dst[oy * ow + ox] = w0 * rows[i0 * ow + ox] + w1 * rows[i1 * ow + ox];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`] for an input of `height×width`.
pub fn upsample_bilinear_backward(grad_out: &FeatureMap, height: usize, width: usize) -> FeatureMap {
    let (ty, tx) = (upsample_taps(height), upsample_taps(width));
    let (oh, ow) = (grad_out.height, grad_out.width);
    debug_assert_eq!((oh, ow), (2 * height, 2 * width));
    let mut out = FeatureMap::zeros(grad_out.channels, height, width);
    let mut rows = vec![0.0; height * ow];
    for c in 0..grad_out.channels {
        rows.iter_mut().for_each(|v| *v = 0.0);
        let g = &grad_out.data[c * oh * ow..(c + 1) * oh * ow];
        for (oy, &(i0, i1, w0, w1)) in ty.iter().enumerate() {
            for ox in 0..ow {
                let v = g[oy * ow + ox];
                rows[i0 * ow + ox] += w0 * v;
                rows[i1 * ow + ox] += w1 * v;
            }
        }
        let dst = &mut out.data[c * height * width..(c + 1) * height * width];
        for y in 0..height {
            for (ox, &(i0, i1, w0, w1)) in tx.iter().enumerate() {
                let v = rows[y * ow + ox];
                dst[y * width + i0] += w0 * v;
                dst[y * width + i1] += w1 * v;
            }
        }
    }
    out
}
