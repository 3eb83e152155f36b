//! Blind image deblurring by stochastic reverse-diffusion optimisation.
//!
//! An untrained U-Net denoiser `D_θ` and an MLP kernel generator `G_φ` are fit
//! to a single blurred observation `y = x ⊛ k + n`, while both inputs are
//! re-perturbed with a decreasing noise schedule at every outer step.

pub mod denoiser;
pub mod engine;
pub mod error;
mod fft;
pub mod forward_model;
pub mod harness;
pub mod io;
pub mod kernel_generator;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use engine::{run, GroundTruth, KernelReg, RunDirectory, RunOutput, SdiConfig, Solver, StepRecord};
pub use error::{Error, Result};
pub use forward_model::{convolve_direct, convolve_fft, synthesize_observation, BoundaryMode};
pub use kernel_generator::{GeneratorMode, KernelGenConfig, KernelGenerator};
pub use metrics::{kernel_similarity, psnr, ssim, MetricReport};
pub use schedule::NoiseSchedule;
pub use tensor::{BlurKernel, ImageTensor};
