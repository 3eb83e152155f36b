//! Embedded-Gaussian non-local block.
//!
//! With positions as columns, `θ = W_θ X`, `φ = W_φ X`, `g = W_g X` (1×1
//! projections to half the channels), `A = softmax_rows(θᵀ φ)`, `Y = g Aᵀ` and
//! the output is `X + W_z Y + b_z`. `W_z`/`b_z` start at zero so a fresh block
//! is the identity.

use super::gemm::gemm;
use super::layers::{fan_in_bound, FeatureMap};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// 1×1 projection `W X + b` over channel-major columns.
#[derive(Debug, Clone)]
pub struct Projection {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Projection {
    fn new(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: Option<&mut StreamRng>,
    ) -> Self {
        let (w, b) = match rng {
            Some(rng) => {
                let bound = fan_in_bound(inputs);
                (
                    rng::uniform_symmetric(rng, bound, inputs * outputs),
                    rng::uniform_symmetric(rng, bound, outputs),
                )
            }
            None => (vec![0.0; inputs * outputs], vec![0.0; outputs]),
        };
        Self {
            inputs,
            outputs,
            weight: params.add(format!("{name}.weight"), vec![outputs, inputs], w),
            bias: params.add(format!("{name}.bias"), vec![outputs], b),
        }
    }

    fn forward(&self, params: &ParamSet, x: &[f64], positions: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs * positions];
        for (row, b) in out.chunks_mut(positions).zip(params.value(self.bias)) {
            row.iter_mut().for_each(|v| *v = *b);
        }
        gemm(self.outputs, self.inputs, positions, 1.0, params.value(self.weight), false, x, false, 1.0, &mut out);
        out
    }

    /// Accumulates parameter gradients and adds `Wᵀ g` into `grad_x`.
    fn backward(&self, params: &mut ParamSet, x: &[f64], grad_out: &[f64], positions: usize, grad_x: &mut [f64]) {
        for (gb, row) in params.grad_mut(self.bias).iter_mut().zip(grad_out.chunks(positions)) {
            *gb += row.iter().sum::<f64>();
        }
        gemm(self.outputs, positions, self.inputs, 1.0, grad_out, false, x, true, 1.0, params.grad_mut(self.weight));
        gemm(self.inputs, self.outputs, positions, 1.0, params.value(self.weight), true, grad_out, false, 1.0, grad_x);
    }
}

#[derive(Debug, Clone)]
pub struct NonLocalBlock {
    pub channels: usize,
    pub inner: usize,
    pub theta: Projection,
    pub phi: Projection,
    pub g: Projection,
    pub out: Projection,
}

#[derive(Debug, Clone)]
pub struct NonLocalCache {
    input: Vec<f64>,
    theta: Vec<f64>,
    phi: Vec<f64>,
    g: Vec<f64>,
    attention: Vec<f64>,
    response: Vec<f64>,
}

impl NonLocalBlock {
    pub fn new(params: &mut ParamSet, name: &str, channels: usize, rng: &mut StreamRng) -> Self {
        let inner = (channels / 2).max(1);
        Self {
            channels,
            inner,
            theta: Projection::new(params, &format!("{name}.theta"), channels, inner, Some(rng)),
            phi: Projection::new(params, &format!("{name}.phi"), channels, inner, Some(rng)),
            g: Projection::new(params, &format!("{name}.g"), channels, inner, Some(rng)),
            out: Projection::new(params, &format!("{name}.out"), inner, channels, None),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &FeatureMap) -> Result<(FeatureMap, NonLocalCache)> {
        if x.channels != self.channels {
            return Err(Error::dimension(format!(
                "non-local block expects {} channels, got {}",
                self.channels, x.channels
            )));
        }
        let n = x.pixels();
        let theta = self.theta.forward(params, &x.data, n);
        let phi = self.phi.forward(params, &x.data, n);
        let g = self.g.forward(params, &x.data, n);
        // affinities f[i, j] = Σ_k θ[k, i] φ[k, j]
        let mut attention = vec![0.0; n * n];
        gemm(n, self.inner, n, 1.0, &theta, true, &phi, false, 0.0, &mut attention);
        for row in attention.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        // Y[k, i] = Σ_j g[k, j] A[i, j]
        let mut response = vec![0.0; self.inner * n];
        gemm(self.inner, n, n, 1.0, &g, false, &attention, true, 0.0, &mut response);
        let mut out = self.out.forward(params, &response, n);
        for (o, xv) in out.iter_mut().zip(&x.data) {
            *o += xv;
        }
        Ok((
            FeatureMap::new(x.channels, x.height, x.width, out),
            NonLocalCache {
                input: x.data.clone(),
                theta,
                phi,
                g,
                attention,
                response,
            },
        ))
    }

    pub fn backward(&self, params: &mut ParamSet, cache: &NonLocalCache, grad_out: &FeatureMap) -> FeatureMap {
        let n = grad_out.pixels();
        let c = self.inner;
        let mut grad_x = grad_out.data.clone();

        let mut g_response = vec![0.0; c * n];
        self.out.backward(params, &cache.response, &grad_out.data, n, &mut g_response);

        // Y = g Aᵀ
        let mut g_g = vec![0.0; c * n];
        gemm(c, n, n, 1.0, &g_response, false, &cache.attention, false, 0.0, &mut g_g);
        let mut g_att = vec![0.0; n * n];
        gemm(n, c, n, 1.0, &g_response, true, &cache.g, false, 0.0, &mut g_att);

        // row softmax
        for (ga, a) in g_att.chunks_mut(n).zip(cache.attention.chunks(n)) {
            let inner: f64 = ga.iter().zip(a).map(|(x, y)| x * y).sum();
            for (gv, av) in ga.iter_mut().zip(a) {
                *gv = av * (*gv - inner);
            }
        }

        // f = θᵀ φ
        let mut g_theta = vec![0.0; c * n];
        gemm(c, n, n, 1.0, &cache.phi, false, &g_att, true, 0.0, &mut g_theta);
        let mut g_phi = vec![0.0; c * n];
        gemm(c, n, n, 1.0, &cache.theta, false, &g_att, false, 0.0, &mut g_phi);

        self.theta.backward(params, &cache.input, &g_theta, n, &mut grad_x);
        self.phi.backward(params, &cache.input, &g_phi, n, &mut grad_x);
        self.g.backward(params, &cache.input, &g_g, n, &mut grad_x);
        FeatureMap::new(grad_out.channels, grad_out.height, grad_out.width, grad_x)
    }
}
