//! Per-step noise levels for the reverse self-diffusion process.
//!
//! Arrays are indexed `0..T`. The engine walks outer steps `t = T, …, 1` and reads
//! index `t − 1` at step `t`, so the largest noise level drives the first step.
//!
//! The variance interpolation follows
//! `β_i = β_end + i / (T − 1) · (β_start − β_end)`, which starts at `β_end` and
//! ends at `β_start`. [`BetaDirection::Reversed`] swaps the endpoints.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_STEPS: usize = 30;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
pub const DEFAULT_MU: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaDirection {
    /// `β_0 = β_end`, `β_{T−1} = β_start`.
    #[default]
    Verbatim,
    /// `β_0 = β_start`, `β_{T−1} = β_end`.
    Reversed,
}

impl std::str::FromStr for BetaDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verbatim" => Ok(Self::Verbatim),
            "reversed" => Ok(Self::Reversed),
            other => Err(Error::validation(format!("unknown beta direction '{other}'"))),
        }
    }
}

impl std::fmt::Display for BetaDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Verbatim => "verbatim",
            Self::Reversed => "reversed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub mu: f64,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Image perturbation level `sqrt(1 − ᾱ)`.
    pub sigma: Vec<f64>,
    /// Kernel-latent perturbation level `μ · σ`.
    pub sigma_kernel: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(steps: usize, beta_start: f64, beta_end: f64, mu: f64) -> Result<Self> {
        Self::build_with(steps, beta_start, beta_end, mu, BetaDirection::Verbatim)
    }

    pub fn build_with(
        steps: usize,
        beta_start: f64,
        beta_end: f64,
        mu: f64,
        direction: BetaDirection,
    ) -> Result<Self> {
        if steps < 2 {
            return Err(Error::validation(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        for (name, b) in [("beta_start", beta_start), ("beta_end", beta_end)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::validation(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if mu <= 0.0 || !mu.is_finite() {
            return Err(Error::validation(format!("mu must be positive, got {mu}")));
        }
        let (first, last) = match direction {
            BetaDirection::Verbatim => (beta_end, beta_start),
            BetaDirection::Reversed => (beta_start, beta_end),
        };
        let span = (steps - 1) as f64;
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                // two-term form of the same interpolation, exact at both endpoints
                let f = i as f64 / span;
                (1.0 - f) * first + f * last
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        let sigma: Vec<f64> = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
        let sigma_kernel = sigma.iter().map(|s| mu * s).collect();
        Ok(Self {
            steps,
            beta_start,
            beta_end,
            mu,
            beta,
            alpha_bar,
            sigma,
            sigma_kernel,
        })
    }

    /// `(σ_t, σ′_t)` for outer step `t ∈ 1..=T`.
    pub fn levels_at_step(&self, t: usize) -> (f64, f64) {
        assert!((1..=self.steps).contains(&t), "outer step {t} out of range");
        (self.sigma[t - 1], self.sigma_kernel[t - 1])
    }

    /// Writes `t,beta,alpha_bar,sigma,sigma_kernel` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::io("<schedule csv>", e.into());
        w.write_record(["t", "beta", "alpha_bar", "sigma", "sigma_kernel"])
            .map_err(io)?;
        for i in 0..self.steps {
            w.write_record([
                (i + 1).to_string(),
                self.beta[i].to_string(),
                self.alpha_bar[i].to_string(),
                self.sigma[i].to_string(),
                self.sigma_kernel[i].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<schedule csv>", e))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::build(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END, DEFAULT_MU)
            .expect("default schedule parameters are valid")
    }
}

/// `input + sigma · ε` with `ε` the standard normal stream for `seed`.
pub fn perturb(input: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::validation(format!(
            "perturbation level must be finite and non-negative, got {sigma}"
        )));
    }
    let noise = rng::gaussian(seed, input.len());
    Ok(input
        .iter()
        .zip(&noise)
        .map(|(x, e)| x + sigma * e)
        .collect())
}
