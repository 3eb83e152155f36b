//! Joint Adam optimizer over parameter groups with per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const DEFAULT_DENOISER_LR: f64 = 1e-3;
pub const DEFAULT_KERNEL_LR: f64 = 2.5e-4;
pub const KERNEL_LR_DECAY: f64 = 0.95;
pub const KERNEL_LR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    Denoiser,
    KernelGen,
}

/// Parameters updated with one learning rate.
#[derive(Debug)]
pub struct ParamGroup<'a> {
    pub name: GroupName,
    pub learning_rate: f64,
    pub params: &'a mut ParamSet,
}

impl<'a> ParamGroup<'a> {
    pub fn new(name: GroupName, learning_rate: f64, params: &'a mut ParamSet) -> Self {
        Self {
            name,
            learning_rate,
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments for every scalar, grouped like the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    /// `moments[group][param] = (m, v)`.
    pub moments: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was NaN or infinite; nothing changed.
    SkippedNonFinite,
}

#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    fn ensure_state(&mut self, groups: &[ParamGroup<'_>]) -> Result<()> {
        if self.state.moments.is_empty() {
            self.state.moments = groups
                .iter()
                .map(|g| {
                    g.params
                        .iter()
                        .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
                        .collect()
                })
                .collect();
            return Ok(());
        }
        let consistent = self.state.moments.len() == groups.len()
            && groups.iter().zip(&self.state.moments).all(|(g, m)| {
                m.len() == g.params.len() && g.params.iter().zip(m).all(|(p, (mv, _))| mv.len() == p.len())
            });
        if consistent {
            Ok(())
        } else {
            Err(Error::dimension("parameter groups changed shape between Adam steps"))
        }
    }

    /// One bias-corrected Adam update using each group's own learning rate.
    pub fn step(&mut self, groups: &mut [ParamGroup<'_>]) -> Result<StepOutcome> {
        for g in groups.iter() {
            if g.learning_rate < 0.0 || !g.learning_rate.is_finite() {
                return Err(Error::validation(format!(
                    "learning rate of {:?} must be finite and non-negative",
                    g.name
                )));
            }
        }
        self.ensure_state(groups)?;
        if !groups.iter().all(|g| g.params.grads_finite()) {
            log::warn!("non-finite gradient, skipping Adam step {}", self.state.step + 1);
            return Ok(StepOutcome::SkippedNonFinite);
        }
        self.state.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (group, moments) in groups.iter_mut().zip(&mut self.state.moments) {
            let lr = group.learning_rate;
            for (param, (m, v)) in group.params.iter_mut().zip(moments.iter_mut()) {
                for i in 0..param.value.len() {
                    let g = param.grad[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    param.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(StepOutcome::Applied)
    }
}

/// Kernel-generator learning rate after one outer step: `max(0.95·lr, 1e-5)`.
pub fn decay_kernel_lr(current: f64) -> f64 {
    (KERNEL_LR_DECAY * current).max(KERNEL_LR_FLOOR)
}
