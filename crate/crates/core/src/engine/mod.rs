//! Reverse self-diffusion solver.
//!
//! Starting from `x_T ~ N(0, I)` and a latent `z_T`, each outer step `t = T, …, 1`
//!
//! 1. draws `ε_x`, `ε_z` once and forms `x̂_t = x_t + σ_t ε_x`, `ẑ_t = z_t + σ′_t ε_z`;
//! 2. runs `S` Adam iterations on `‖D_θ(x̂_t) ⊛ G_φ(ẑ_t) − y‖² + λ_k R(G_φ(ẑ_t))`
//!    with the noisy inputs held fixed;
//! 3. hands off `x_{t−1} = D_θ(x̂_t)` and, in diffusion mode, `z_{t−1} = G_φ(ẑ_t)`
//!    flattened (the kernel has exactly `K²` entries, the latent length). In
//!    standard mode `z` stays at its initial draw and only its perturbation varies;
//! 4. decays the kernel-generator learning rate.
//!
//! The returned image is `x_0` and the kernel is `G_φ(ẑ_1)`.

pub mod loss;
mod rundir;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig, DEFAULT_BASE_CHANNELS, DEFAULT_LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::forward_model::BoundaryMode;
use crate::kernel_generator::{
    sample_latent, GeneratorMode, KernelGenConfig, KernelGenerator, DEFAULT_HIDDEN_DIM, DEFAULT_NUM_HIDDEN,
};
use crate::metrics;
use crate::optim::{decay_kernel_lr, Adam, AdamConfig, GroupName, ParamGroup, StepOutcome};
use crate::rng;
use crate::schedule::{
    perturb, BetaDirection, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_MU, DEFAULT_STEPS,
};
use crate::tensor::{BlurKernel, ImageTensor};

pub use loss::{composite_loss, DataConsistency, KernelReg, LossEval};
pub use rundir::{snapshot_steps, RunDirectory, TRACE_HEADER};

pub const DEFAULT_INNER_ITERS: usize = 200;
pub const DEFAULT_LAMBDA_K: f64 = 2e-3;
pub const DEFAULT_KERNEL_SIZE: usize = 27;

// seed-derivation tags
const TAG_DENOISER: u64 = 1;
const TAG_GENERATOR: u64 = 2;
const TAG_IMAGE_INIT: u64 = 3;
const TAG_LATENT_INIT: u64 = 4;
const TAG_IMAGE_NOISE: u64 = 5;
const TAG_LATENT_NOISE: u64 = 6;

/// Every knob of one solver run. Serialized verbatim as `config.txt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdiConfig {
    /// `T`.
    pub outer_steps: usize,
    /// `S`.
    pub inner_iters: usize,
    pub kernel_size: usize,
    pub lambda_k: f64,
    pub kernel_reg: KernelReg,
    pub denoiser_lr: f64,
    pub kernel_lr: f64,
    pub kernel_lr_decay: bool,
    pub beta_start: f64,
    pub beta_end: f64,
    pub mu: f64,
    pub beta_direction: BetaDirection,
    pub generator_mode: GeneratorMode,
    pub hidden_dim: usize,
    pub num_hidden: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    pub boundary: BoundaryMode,
    pub seed: u64,
    /// Snapshot every this many outer steps (plus the last); 0 disables snapshots.
    pub snapshot_every: usize,
    pub adam: AdamConfig,
}

impl Default for SdiConfig {
    fn default() -> Self {
        Self {
            outer_steps: DEFAULT_STEPS,
            inner_iters: DEFAULT_INNER_ITERS,
            kernel_size: DEFAULT_KERNEL_SIZE,
            lambda_k: DEFAULT_LAMBDA_K,
            kernel_reg: KernelReg::L1,
            denoiser_lr: crate::optim::DEFAULT_DENOISER_LR,
            kernel_lr: crate::optim::DEFAULT_KERNEL_LR,
            kernel_lr_decay: true,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            mu: DEFAULT_MU,
            beta_direction: BetaDirection::Verbatim,
            generator_mode: GeneratorMode::Diffusion,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            num_hidden: DEFAULT_NUM_HIDDEN,
            base_channels: DEFAULT_BASE_CHANNELS,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            boundary: BoundaryMode::Circular,
            seed: 0,
            snapshot_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl SdiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_steps < 2 {
            return Err(Error::validation(format!(
                "outer steps must be at least 2, got {}",
                self.outer_steps
            )));
        }
        if self.inner_iters == 0 {
            return Err(Error::validation("inner iterations must be at least 1"));
        }
        if self.lambda_k < 0.0 || !self.lambda_k.is_finite() {
            return Err(Error::validation(format!(
                "lambda_k must be finite and non-negative, got {}",
                self.lambda_k
            )));
        }
        for (name, lr) in [("denoiser_lr", self.denoiser_lr), ("kernel_lr", self.kernel_lr)] {
            if lr < 0.0 || !lr.is_finite() {
                return Err(Error::validation(format!("{name} must be finite and non-negative, got {lr}")));
            }
        }
        self.generator_config().validate()?;
        self.denoiser_config(1).validate()?;
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build_with(self.outer_steps, self.beta_start, self.beta_end, self.mu, self.beta_direction)
    }

    pub fn generator_config(&self) -> KernelGenConfig {
        KernelGenConfig {
            mode: self.generator_mode,
            kernel_size: self.kernel_size,
            hidden_dim: self.hidden_dim,
            num_hidden: self.num_hidden,
        }
    }

    pub fn denoiser_config(&self, channels: usize) -> DenoiserConfig {
        DenoiserConfig {
            leaky_slope: self.leaky_slope,
            ..DenoiserConfig::new(channels, self.base_channels)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "run configuration",
            path: "config.txt".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reference data used only for per-step reporting.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub image: ImageTensor,
    pub kernel: Option<BlurKernel>,
}

/// One outer step of the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Outer step `t`, counting down from `T` to 1.
    pub step: usize,
    pub sigma: f64,
    pub sigma_kernel: f64,
    /// Loss at the first inner iteration.
    pub first_loss: f64,
    /// Loss at the last inner iteration.
    pub loss: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub kernel_similarity: Option<f64>,
    /// Kernel learning rate used during this step.
    pub kernel_lr: f64,
    /// Inner iterations whose update was skipped for non-finite values.
    pub skipped_iters: usize,
    pub elapsed_s: f64,
}

pub type RunTrace = Vec<StepRecord>;

/// Estimates available after an outer step.
pub struct StepView<'a> {
    pub record: &'a StepRecord,
    /// `x_{t−1}`.
    pub image: &'a ImageTensor,
    /// `G_φ(ẑ_t)`.
    pub kernel: &'a BlurKernel,
}

/// Receives every outer step as it completes.
pub trait RunObserver {
    fn on_step(&mut self, view: &StepView<'_>);
}

impl<F: FnMut(&StepView<'_>)> RunObserver for F {
    fn on_step(&mut self, view: &StepView<'_>) {
        self(view)
    }
}

/// No-op observer.
pub struct Silent;

impl RunObserver for Silent {
    fn on_step(&mut self, _: &StepView<'_>) {}
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub image: ImageTensor,
    pub kernel: BlurKernel,
    pub trace: RunTrace,
}

/// Solver state: both networks, the optimizer, and the current estimates.
pub struct Solver {
    config: SdiConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    generator: KernelGenerator,
    adam: Adam,
    data_term: DataConsistency,
    image: ImageTensor,
    latent: Vec<f64>,
    kernel_lr: f64,
}

impl Solver {
    pub fn new(observation: &ImageTensor, config: &SdiConfig) -> Result<Self> {
        config.validate()?;
        if !observation.in_unit_range() {
            return Err(Error::validation("observation must lie in [0, 1]"));
        }
        let seed = config.seed;
        let denoiser = Denoiser::new(
            config.denoiser_config(observation.channels()),
            rng::derive_seed(seed, &[TAG_DENOISER]),
        )?;
        let generator = KernelGenerator::new(config.generator_config(), rng::derive_seed(seed, &[TAG_GENERATOR]))?;
        let data_term = DataConsistency::new(observation, config.kernel_size, config.boundary)?;
        let image = ImageTensor::new(
            observation.height(),
            observation.width(),
            observation.channels(),
            rng::gaussian(rng::derive_seed(seed, &[TAG_IMAGE_INIT]), observation.len()),
        )?;
        let latent = sample_latent(
            config.generator_mode,
            config.kernel_size,
            rng::derive_seed(seed, &[TAG_LATENT_INIT]),
        )?
        .values;
        Ok(Self {
            config: config.clone(),
            schedule: config.schedule()?,
            denoiser,
            generator,
            adam: Adam::new(config.adam),
            data_term,
            image,
            latent,
            kernel_lr: config.kernel_lr,
        })
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    pub fn generator(&self) -> &KernelGenerator {
        &self.generator
    }

    pub fn denoiser_mut(&mut self) -> &mut Denoiser {
        &mut self.denoiser
    }

    pub fn generator_mut(&mut self) -> &mut KernelGenerator {
        &mut self.generator
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Current `x_t`.
    pub fn image(&self) -> &ImageTensor {
        &self.image
    }

    /// Current `z_t`.
    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn kernel_lr(&self) -> f64 {
        self.kernel_lr
    }

    /// Noisy inputs `(x̂_t, ẑ_t)` for outer step `t`.
    pub fn noisy_inputs(&self, t: usize) -> Result<(ImageTensor, Vec<f64>)> {
        let (sigma, sigma_k) = self.schedule.levels_at_step(t);
        let seed = self.config.seed;
        let t64 = t as u64;
        let x_hat = perturb(self.image.data(), sigma, rng::derive_seed(seed, &[TAG_IMAGE_NOISE, t64]))?;
        let z_hat = perturb(&self.latent, sigma_k, rng::derive_seed(seed, &[TAG_LATENT_NOISE, t64]))?;
        Ok((
            ImageTensor::new(self.image.height(), self.image.width(), self.image.channels(), x_hat)?,
            z_hat,
        ))
    }

    /// Composite loss at the current parameters with gradients accumulated into
    /// both parameter sets (previous gradients are cleared). No update is made.
    pub fn loss_and_gradients(&mut self, x_hat: &ImageTensor, z_hat: &[f64]) -> Result<f64> {
        self.denoiser.params_mut().zero_grad();
        self.generator.params_mut().zero_grad();
        let (kernel, kcache) = self.generator.forward(z_hat)?;
        let (estimate, dcache) = self.denoiser.forward(x_hat)?;
        let eval = self
            .data_term
            .evaluate(&estimate, &kernel, self.config.lambda_k, self.config.kernel_reg)?;
        if !eval.total.is_finite() {
            return Ok(eval.total);
        }
        let grad_image = ImageTensor::from_parts(estimate.height(), estimate.width(), estimate.channels(), eval.grad_image);
        self.denoiser.backward(&dcache, &grad_image);
        self.generator.backward(&kcache, &eval.grad_kernel, None);
        Ok(eval.total)
    }

    /// One joint Adam iteration on fixed noisy inputs. Returns the loss evaluated
    /// before the update, or `None` when it was not finite and the update was skipped.
    pub fn inner_iteration(&mut self, x_hat: &ImageTensor, z_hat: &[f64]) -> Result<Option<f64>> {
        let loss = self.loss_and_gradients(x_hat, z_hat)?;
        if !loss.is_finite() {
            log::warn!("non-finite loss {loss}, skipping update");
            return Ok(None);
        }
        let outcome = self.adam.step(&mut [
            ParamGroup::new(GroupName::Denoiser, self.config.denoiser_lr, self.denoiser.params_mut()),
            ParamGroup::new(GroupName::KernelGen, self.kernel_lr, self.generator.params_mut()),
        ])?;
        Ok(match outcome {
            StepOutcome::Applied => Some(loss),
            StepOutcome::SkippedNonFinite => None,
        })
    }

    /// Runs outer step `t` and advances the estimates to `t − 1`.
    pub fn outer_step(
        &mut self,
        t: usize,
        ground_truth: Option<&GroundTruth>,
    ) -> Result<(StepRecord, ImageTensor, BlurKernel)> {
        let started = Instant::now();
        let (sigma, sigma_kernel) = self.schedule.levels_at_step(t);
        let (x_hat, z_hat) = self.noisy_inputs(t)?;
        let mut first_loss = None;
        let mut last_loss = None;
        let mut skipped = 0;
        for _ in 0..self.config.inner_iters {
            match self.inner_iteration(&x_hat, &z_hat)? {
                Some(l) => {
                    first_loss.get_or_insert(l);
                    last_loss = Some(l);
                }
                None => skipped += 1,
            }
        }
        let (Some(first_loss), Some(loss)) = (first_loss, last_loss) else {
            return Err(Error::NonFinite {
                step: t,
                message: format!("all {} inner iterations produced non-finite values", self.config.inner_iters),
            });
        };
        let image = self.denoiser.denoise(&x_hat)?;
        let kernel = self.generator.generate(&z_hat)?;
        if self.config.generator_mode == GeneratorMode::Diffusion {
            self.latent = kernel.weights().to_vec();
        }
        self.image = image.clone();
        let kernel_lr = self.kernel_lr;
        // a zero rate freezes the generator; the floor must not revive it
        if self.config.kernel_lr_decay && self.kernel_lr > 0.0 {
            self.kernel_lr = decay_kernel_lr(self.kernel_lr);
        }
        let (psnr, ssim, kernel_similarity) = match ground_truth {
            Some(gt) => (
                Some(metrics::psnr(&gt.image, &image)?),
                metrics::ssim(&gt.image, &image).ok(),
                gt.kernel.as_ref().map(|k| metrics::kernel_similarity(k, &kernel)),
            ),
            None => (None, None, None),
        };
        let record = StepRecord {
            step: t,
            sigma,
            sigma_kernel,
            first_loss,
            loss,
            psnr,
            ssim,
            kernel_similarity,
            kernel_lr,
            skipped_iters: skipped,
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        Ok((record, image, kernel))
    }
}

/// Runs the full reverse process on observation `y`.
///
/// Steps completed before a non-finite abort have already been delivered to
/// `observer`.
pub fn run(
    observation: &ImageTensor,
    config: &SdiConfig,
    ground_truth: Option<&GroundTruth>,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput> {
    if let Some(gt) = ground_truth {
        if !gt.image.same_shape(observation) {
            return Err(Error::dimension(format!(
                "ground truth {} vs observation {}",
                gt.image.shape_string(),
                observation.shape_string()
            )));
        }
    }
    let mut solver = Solver::new(observation, config)?;
    let mut trace = Vec::with_capacity(config.outer_steps);
    let mut last = None;
    for t in (1..=config.outer_steps).rev() {
        let (record, image, kernel) = solver.outer_step(t, ground_truth)?;
        observer.on_step(&StepView {
            record: &record,
            image: &image,
            kernel: &kernel,
        });
        trace.push(record);
        last = Some((image, kernel));
    }
    let (image, kernel) = last.expect("at least two outer steps");
    Ok(RunOutput { image, kernel, trace })
}
