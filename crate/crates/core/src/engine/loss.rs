//! Composite objective `‖x ⊛ k − y‖² + λ_k · R(k)` and its gradients.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{embed_kernel, Fft2};
use crate::forward_model::{BoundaryMode, ConvPlan};
use crate::tensor::{BlurKernel, ImageTensor};

/// Kernel sizes from which the circular data term switches to the FFT path.
const FFT_MIN_KERNEL: usize = 15;
const LOG_FLOOR: f64 = 1e-300;
const SQRT_EPS: f64 = 1e-8;

/// Kernel regularizer `R(k)`.
///
/// `L1` is the stated default. On softmax outputs it is identically one, so it
/// contributes no gradient; the other variants exist for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelReg {
    /// `Σ |k_ij|`.
    #[default]
    L1,
    /// `Σ |log k_ij − mean(log k)|`: ℓ1 of the centered pre-softmax logits.
    L1Presoftmax,
    /// `Σ sqrt(k_ij + 1e-8)`, a concave sparsity penalty on the simplex.
    SqrtSparsity,
    None,
}

impl std::str::FromStr for KernelReg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l1-presoftmax" => Ok(Self::L1Presoftmax),
            "sqrt-sparsity" => Ok(Self::SqrtSparsity),
            "none" => Ok(Self::None),
            other => Err(Error::validation(format!("unknown kernel regularizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for KernelReg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L1 => "l1",
            Self::L1Presoftmax => "l1-presoftmax",
            Self::SqrtSparsity => "sqrt-sparsity",
            Self::None => "none",
        })
    }
}

impl KernelReg {
    /// Value and gradient with respect to the kernel weights.
    pub fn evaluate(self, weights: &[f64]) -> (f64, Vec<f64>) {
        match self {
            KernelReg::L1 => (
                weights.iter().map(|w| w.abs()).sum(),
                weights.iter().map(|w| w.signum()).collect(),
            ),
            KernelReg::L1Presoftmax => {
                let n = weights.len() as f64;
                let logs: Vec<f64> = weights.iter().map(|w| w.max(LOG_FLOOR).ln()).collect();
                let mean = logs.iter().sum::<f64>() / n;
                let signs: Vec<f64> = logs.iter().map(|l| (l - mean).signum()).collect();
                let mean_sign = signs.iter().sum::<f64>() / n;
                let value = logs.iter().map(|l| (l - mean).abs()).sum();
                let grad = signs
                    .iter()
                    .zip(weights)
                    .map(|(s, w)| (s - mean_sign) / w.max(LOG_FLOOR))
                    .collect();
                (value, grad)
            }
            KernelReg::SqrtSparsity => (
                weights.iter().map(|w| (w + SQRT_EPS).sqrt()).sum(),
                weights.iter().map(|w| 0.5 / (w + SQRT_EPS).sqrt()).collect(),
            ),
            KernelReg::None => (0.0, vec![0.0; weights.len()]),
        }
    }
}

/// Loss value with gradients for the image estimate and the kernel.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub data: f64,
    pub regularizer: f64,
    pub total: f64,
    pub grad_image: Vec<f64>,
    pub grad_kernel: Vec<f64>,
}

/// Data-consistency term against a fixed observation.
pub struct DataConsistency {
    observation: ImageTensor,
    plan: ConvPlan,
    fft: Option<Fft2>,
    ksize: usize,
}

impl DataConsistency {
    pub fn new(observation: &ImageTensor, ksize: usize, boundary: BoundaryMode) -> Result<Self> {
        let plan = ConvPlan::new(observation.height(), observation.width(), ksize, boundary)?;
        let fft = (boundary == BoundaryMode::Circular && ksize >= FFT_MIN_KERNEL)
            .then(|| Fft2::new(observation.height(), observation.width()));
        Ok(Self {
            observation: observation.clone(),
            plan,
            fft,
            ksize,
        })
    }

    /// Forces the spatial path even where the FFT path would be used.
    pub fn direct_only(mut self) -> Self {
        self.fft = None;
        self
    }

    pub fn evaluate(
        &self,
        estimate: &ImageTensor,
        kernel: &BlurKernel,
        lambda_k: f64,
        reg: KernelReg,
    ) -> Result<LossEval> {
        let y = &self.observation;
        if !estimate.same_shape(y) {
            return Err(Error::dimension(format!(
                "estimate {} vs observation {}",
                estimate.shape_string(),
                y.shape_string()
            )));
        }
        if kernel.size() != self.ksize {
            return Err(Error::dimension(format!(
                "kernel size {} vs planned {}",
                kernel.size(),
                self.ksize
            )));
        }
        let n = y.height() * y.width();
        let mut grad_image = vec![0.0; y.len()];
        let mut grad_kernel = vec![0.0; kernel.weights().len()];
        let mut data = 0.0;
        let kspec = self.fft.as_ref().map(|f| {
            f.forward_real(&embed_kernel(kernel.weights(), self.ksize, y.height(), y.width()))
        });
        for c in 0..y.channels() {
            let x = estimate.plane(c);
            let obs = y.plane(c);
            let gimg = &mut grad_image[c * n..(c + 1) * n];
            match (&self.fft, &kspec) {
                (Some(fft), Some(kspec)) => {
                    let xspec = fft.forward_real(x);
                    let blurred = fft.inverse_real(xspec.iter().zip(kspec).map(|(a, b)| a * b).collect());
                    let residual: Vec<f64> = blurred.iter().zip(obs).map(|(b, o)| 2.0 * (b - o)).collect();
                    data += residual.iter().map(|r| 0.25 * r * r).sum::<f64>();
                    let rspec = fft.forward_real(&residual);
                    let gx = fft.inverse_real(rspec.iter().zip(kspec).map(|(r, k)| r * k.conj()).collect());
                    gimg.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
                    let corr: Vec<Complex<f64>> = rspec.iter().zip(&xspec).map(|(r, x)| r * x.conj()).collect();
                    let corr = fft.inverse_real(corr);
                    accumulate_kernel_from_correlation(&corr, y.height(), y.width(), self.ksize, &mut grad_kernel);
                }
                _ => {
                    let mut blurred = vec![0.0; n];
                    self.plan.forward(x, kernel.weights(), &mut blurred);
                    let residual: Vec<f64> = blurred.iter().zip(obs).map(|(b, o)| 2.0 * (b - o)).collect();
                    data += residual.iter().map(|r| 0.25 * r * r).sum::<f64>();
                    self.plan.adjoint_source(&residual, kernel.weights(), gimg);
                    self.plan.adjoint_kernel(&residual, x, &mut grad_kernel);
                }
            }
        }
        let (r_value, r_grad) = reg.evaluate(kernel.weights());
        for (g, r) in grad_kernel.iter_mut().zip(&r_grad) {
            *g += lambda_k * r;
        }
        let regularizer = lambda_k * r_value;
        Ok(LossEval {
            data,
            regularizer,
            total: data + regularizer,
            grad_image,
            grad_kernel,
        })
    }
}

/// `corr[d] = Σ_p r[p] x[p − d]`; kernel tap `(a, b)` sits at offset `(a − c, b − c)`.
fn accumulate_kernel_from_correlation(corr: &[f64], h: usize, w: usize, k: usize, grad: &mut [f64]) {
    let c = (k / 2) as isize;
    for a in 0..k {
        let dy = (a as isize - c).rem_euclid(h as isize) as usize;
        for b in 0..k {
            let dx = (b as isize - c).rem_euclid(w as isize) as usize;
            grad[a * k + b] += corr[dy * w + dx];
        }
    }
}

/// `‖x ⊛ k − y‖² + λ_k · R(k)`, squared error summed over all pixels and channels.
pub fn composite_loss(
    estimate: &ImageTensor,
    kernel: &BlurKernel,
    observation: &ImageTensor,
    lambda_k: f64,
    reg: KernelReg,
    boundary: BoundaryMode,
) -> Result<f64> {
    let term = DataConsistency::new(observation, kernel.size(), boundary)?;
    Ok(term.evaluate(estimate, kernel, lambda_k, reg)?.total)
}
