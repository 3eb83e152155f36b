//! Fully connected kernel generator `G_φ`.
//!
//! Two architectures are supported:
//!
//! * **standard** – `Linear(200, 2000) → ReLU6 → Linear(2000, K²) → softmax`, fed a
//!   200-d latent that stays fixed for the whole run;
//! * **diffusion** – `Linear(K², H_d) → ReLU`, `n − 1` further `Linear(H_d, H_d) → ReLU`
//!   layers, then `Linear(H_d, K²) → softmax`, fed a `K²` latent that evolves
//!   through the reverse process.
//!
//! The softmax runs over all `K²` logits, so every output is a valid kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Linear, ParamSet};
use crate::rng;
use crate::tensor::{check_kernel_size, BlurKernel};

pub const STANDARD_LATENT_DIM: usize = 200;
pub const STANDARD_HIDDEN_DIM: usize = 2000;
pub const DEFAULT_HIDDEN_DIM: usize = 1000;
pub const DEFAULT_NUM_HIDDEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Standard,
    #[default]
    Diffusion,
}

impl std::str::FromStr for GeneratorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "diffusion" => Ok(Self::Diffusion),
            other => Err(Error::validation(format!("unknown generator mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for GeneratorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Diffusion => "diffusion",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelGenConfig {
    pub mode: GeneratorMode,
    pub kernel_size: usize,
    /// `H_d`; ignored in standard mode.
    pub hidden_dim: usize,
    /// `n`; ignored in standard mode.
    pub num_hidden: usize,
}

impl KernelGenConfig {
    pub fn new(mode: GeneratorMode, kernel_size: usize) -> Self {
        Self {
            mode,
            kernel_size,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            num_hidden: DEFAULT_NUM_HIDDEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_kernel_size(self.kernel_size)?;
        if self.mode == GeneratorMode::Diffusion {
            if self.hidden_dim == 0 {
                return Err(Error::validation("hidden dimension must be at least 1"));
            }
            if self.num_hidden == 0 {
                return Err(Error::validation("diffusion mode needs at least one hidden layer"));
            }
        }
        Ok(())
    }

    pub fn latent_len(&self) -> usize {
        match self.mode {
            GeneratorMode::Standard => STANDARD_LATENT_DIM,
            GeneratorMode::Diffusion => self.kernel_size * self.kernel_size,
        }
    }

    /// `(inputs, outputs)` of every linear layer, input side first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let k2 = self.kernel_size * self.kernel_size;
        match self.mode {
            GeneratorMode::Standard => vec![(STANDARD_LATENT_DIM, STANDARD_HIDDEN_DIM), (STANDARD_HIDDEN_DIM, k2)],
            GeneratorMode::Diffusion => {
                let mut shapes = vec![(k2, self.hidden_dim)];
                shapes.extend((1..self.num_hidden).map(|_| (self.hidden_dim, self.hidden_dim)));
                shapes.push((self.hidden_dim, k2));
                shapes
            }
        }
    }
}

/// Input code of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelLatent {
    pub values: Vec<f64>,
    /// Standard-mode latents are held fixed for the whole run.
    pub fixed: bool,
}

pub fn sample_latent(mode: GeneratorMode, kernel_size: usize, seed: u64) -> Result<KernelLatent> {
    let config = KernelGenConfig::new(mode, kernel_size);
    check_kernel_size(kernel_size)?;
    Ok(KernelLatent {
        values: rng::gaussian(seed, config.latent_len()),
        fixed: mode == GeneratorMode::Standard,
    })
}

#[derive(Debug, Clone)]
pub struct KernelGenerator {
    config: KernelGenConfig,
    params: ParamSet,
    layers: Vec<Linear>,
    activation: Activation,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct KernelGenCache {
    /// Input of each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl KernelGenerator {
    pub fn new(config: KernelGenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed);
        let mut params = ParamSet::new();
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let name = if i == last { "out".to_string() } else { format!("hidden{}", i + 1) };
                Linear::new(&mut params, &name, fan_in, fan_out, &mut rng)
            })
            .collect();
        let activation = match config.mode {
            GeneratorMode::Standard => Activation::Relu6,
            GeneratorMode::Diffusion => Activation::Relu,
        };
        Ok(Self {
            config,
            params,
            layers,
            activation,
        })
    }

    pub fn config(&self) -> &KernelGenConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, latent: &[f64]) -> Result<(BlurKernel, KernelGenCache)> {
        if latent.len() != self.config.latent_len() {
            return Err(Error::validation(format!(
                "{} mode expects a latent of length {}, got {}",
                self.config.mode,
                self.config.latent_len(),
                latent.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut h = latent.to_vec();
        for layer in &self.layers[..last] {
            let pre = layer.forward(&self.params, &h);
            inputs.push(h);
            h = pre.iter().map(|&v| self.activation.apply(v)).collect();
            pre_activations.push(pre);
        }
        let logits = self.layers[last].forward(&self.params, &h);
        inputs.push(h);
        let probabilities = softmax(&logits);
        let kernel = BlurKernel::from_parts(self.config.kernel_size, probabilities.clone());
        Ok((
            kernel,
            KernelGenCache {
                inputs,
                pre_activations,
                logits,
                probabilities,
            },
        ))
    }

    pub fn generate(&self, latent: &[f64]) -> Result<BlurKernel> {
        Ok(self.forward(latent)?.0)
    }

    /// Accumulates parameter gradients for `∂L/∂k` and, optionally, an extra
    /// `∂L/∂logits` term. Returns `∂L/∂latent`.
    pub fn backward(
        &mut self,
        cache: &KernelGenCache,
        grad_kernel: &[f64],
        grad_logits: Option<&[f64]>,
    ) -> Vec<f64> {
        let p = &cache.probabilities;
        let inner: f64 = grad_kernel.iter().zip(p).map(|(g, q)| g * q).sum();
        let mut g: Vec<f64> = grad_kernel
            .iter()
            .zip(p)
            .map(|(gk, q)| q * (gk - inner))
            .collect();
        if let Some(extra) = grad_logits {
            for (a, b) in g.iter_mut().zip(extra) {
                *a += b;
            }
        }
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let gx = layer.backward(&mut self.params, &cache.inputs[i], &g);
            if i == 0 {
                return gx;
            }
            g = gx
                .iter()
                .zip(&cache.pre_activations[i - 1])
                .map(|(gv, pre)| gv * self.activation.derivative(*pre))
                .collect();
        }
        unreachable!("generator has at least two layers")
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}
