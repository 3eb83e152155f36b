//! Hyperparameter sweeps over a set of test instances.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{self, SdiConfig, Silent};
use crate::error::{Error, Result};
use crate::kernel_generator::GeneratorMode;
use crate::metrics::MetricReport;
use crate::rng;
use crate::tensor::{BlurKernel, ImageTensor};

pub const SWEEP_HEADER: &str = "axis_value,instance,psnr,ssim,kernel_sim,runtime_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    KernelSize,
    OuterSteps,
    InnerIters,
    /// `standard` or `diffusion:<n>` with `n` hidden layers.
    Generator,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel_size" | "kernel-size" => Ok(Self::KernelSize),
            "T" | "outer_steps" | "outer-steps" => Ok(Self::OuterSteps),
            "S" | "inner_iters" | "inner-iters" => Ok(Self::InnerIters),
            "generator" => Ok(Self::Generator),
            other => Err(Error::validation(format!("unknown sweep axis '{other}'"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::KernelSize => "kernel_size",
            Self::OuterSteps => "T",
            Self::InnerIters => "S",
            Self::Generator => "generator",
        })
    }
}

impl SweepAxis {
    /// Parses `start:stop:step` (inclusive) or a comma-separated list.
    pub fn parse_values(self, text: &str) -> Result<Vec<String>> {
        let text = text.trim();
        let values: Vec<String> = if self != Self::Generator && text.contains(':') {
            let parts: Vec<&str> = text.split(':').collect();
            let nums = parts
                .iter()
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::validation(format!("bad range '{text}': {e}")))?;
            let (start, stop, step) = match nums[..] {
                [a, b] => (a, b, 1),
                [a, b, s] => (a, b, s),
                _ => return Err(Error::validation(format!("bad range '{text}'"))),
            };
            if step == 0 || start > stop {
                return Err(Error::validation(format!("empty or invalid range '{text}'")));
            }
            (start..=stop).step_by(step).map(|v| v.to_string()).collect()
        } else {
            text.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
        };
        if values.is_empty() {
            return Err(Error::validation("sweep needs at least one value"));
        }
        for v in &values {
            self.apply(&SdiConfig::default(), v)?;
        }
        Ok(values)
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &SdiConfig, value: &str) -> Result<SdiConfig> {
        let mut cfg = base.clone();
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::validation(format!("'{value}' is not a valid {self} value")))
        };
        match self {
            Self::KernelSize => cfg.kernel_size = int()?,
            Self::OuterSteps => cfg.outer_steps = int()?,
            Self::InnerIters => cfg.inner_iters = int()?,
            Self::Generator => match value.split_once(':') {
                None if value == "standard" => cfg.generator_mode = GeneratorMode::Standard,
                None if value == "diffusion" => cfg.generator_mode = GeneratorMode::Diffusion,
                Some(("diffusion", n)) => {
                    cfg.generator_mode = GeneratorMode::Diffusion;
                    cfg.num_hidden = n
                        .parse()
                        .map_err(|_| Error::validation(format!("bad hidden-layer count in '{value}'")))?;
                }
                _ => return Err(Error::validation(format!("unknown generator variant '{value}'"))),
            },
        }
        Ok(cfg)
    }
}

/// A test instance: observation plus the ground truth used for scoring.
#[derive(Debug, Clone)]
pub struct SweepInstance {
    pub name: String,
    pub observation: ImageTensor,
    pub sharp: ImageTensor,
    pub kernel: Option<BlurKernel>,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub base: SdiConfig,
    pub instances: Vec<SweepInstance>,
    /// Worker threads; runs are independent.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub instance: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub kernel_sim: Option<f64>,
    pub runtime_s: f64,
    /// Set when the run failed; not written to the CSV.
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub axis_value: String,
    pub runs: usize,
    pub failed: usize,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    pub kernel_sim_mean: Option<f64>,
    pub kernel_sim_std: Option<f64>,
}

fn value_tag(value: &str) -> u64 {
    // FNV-1a, so seeds do not depend on value order
    value
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Seed for one (instance, value) run.
pub fn run_seed(base: u64, instance: usize, value: &str) -> u64 {
    rng::derive_seed(base, &[instance as u64, value_tag(value)])
}

fn run_one(spec: &SweepSpec, value: &str, idx: usize) -> SweepRow {
    let inst = &spec.instances[idx];
    let start = Instant::now();
    let outcome = spec.axis.apply(&spec.base, value).and_then(|mut cfg| {
        cfg.seed = run_seed(spec.base.seed, idx, value);
        let out = engine::run(&inst.observation, &cfg, None, &mut Silent)?;
        MetricReport::compute(&inst.sharp, &out.image, inst.kernel.as_ref().map(|k| (k, &out.kernel)))
    });
    let runtime_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(m) => SweepRow {
            axis_value: value.to_string(),
            instance: inst.name.clone(),
            psnr: Some(m.psnr),
            ssim: Some(m.ssim),
            kernel_sim: m.kernel_similarity,
            runtime_s,
            error: None,
        },
        Err(e) => {
            log::warn!("run {value}/{} failed: {e}", inst.name);
            SweepRow {
                axis_value: value.to_string(),
                instance: inst.name.clone(),
                psnr: None,
                ssim: None,
                kernel_sim: None,
                runtime_s,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs every (value, instance) pair. Failures are recorded and do not stop
/// the sweep. Rows come back in (value, instance) order regardless of
/// scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::validation("sweep needs at least one value"));
    }
    if spec.instances.is_empty() {
        return Err(Error::validation("sweep needs at least one instance"));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.instances.len()).map(move |i| (v, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::validation(format!("could not start worker pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(v, i)| run_one(spec, &spec.values[v], i))
            .collect()
    }))
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Mean and population standard deviation per axis value, over successful runs.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.axis_value.as_str()) {
            order.push(&r.axis_value);
        }
    }
    order
        .into_iter()
        .map(|value| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.axis_value == value).collect();
            let col = |f: fn(&SweepRow) -> Option<f64>| group.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let (psnr_mean, psnr_std) = mean_std(&col(|r| r.psnr));
            let (ssim_mean, ssim_std) = mean_std(&col(|r| r.ssim));
            let (kernel_sim_mean, kernel_sim_std) = mean_std(&col(|r| r.kernel_sim));
            SummaryRow {
                axis_value: value.to_string(),
                runs: group.len(),
                failed: group.iter().filter(|r| r.error.is_some()).count(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                kernel_sim_mean,
                kernel_sim_std,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, rows)
}
