//! Central finite differences against the analytic reverse pass of the full
//! composite objective on a 16×16 instance.

use deblur_sdi::engine::{KernelReg, SdiConfig, Solver};
use deblur_sdi::kernel_generator::GeneratorMode;
use deblur_sdi::rng;
use deblur_sdi::ImageTensor;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
// guards the ratio where both derivatives are numerically zero
const ABS_FLOOR: f64 = 1e-6;

fn check_config(reg: KernelReg) -> SdiConfig {
    SdiConfig {
        outer_steps: 2,
        inner_iters: 1,
        kernel_size: 5,
        base_channels: 8,
        generator_mode: GeneratorMode::Diffusion,
        num_hidden: 2,
        hidden_dim: 64,
        lambda_k: 0.05,
        kernel_reg: reg,
        seed: 11,
        ..Default::default()
    }
}

fn observation() -> ImageTensor {
    let mut r = rng::stream(3);
    let v = rng::uniform_symmetric(&mut r, 0.5, 256);
    ImageTensor::new(16, 16, 1, v.iter().map(|x| x + 0.5).collect()).unwrap()
}

#[derive(Clone, Copy)]
enum Net {
    Denoiser,
    Generator,
}

fn set(solver: &mut Solver, net: Net, array: usize, i: usize, v: f64) {
    let ps = match net {
        Net::Denoiser => solver.denoiser_mut().params_mut(),
        Net::Generator => solver.generator_mut().params_mut(),
    };
    ps.iter_mut().nth(array).unwrap().value[i] = v;
}

pub struct GradReport {
    pub coordinates: usize,
    pub arrays_checked: usize,
    pub arrays_total: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

pub fn run_check(reg: KernelReg, per_array: usize) -> GradReport {
    let y = observation();
    let mut solver = Solver::new(&y, &check_config(reg)).unwrap();
    // non-local output projections start at zero, which would hide the
    // attention-path gradients
    let mut r = rng::stream(77);
    for p in solver.denoiser_mut().params_mut().iter_mut() {
        if p.name.contains("nonlocal.out") {
            p.value = rng::uniform_symmetric(&mut r, 0.3, p.value.len());
        }
        // zero shifts on 1×1 maps put pre-activations exactly on the LeakyReLU kink
        if p.name.ends_with("norm.shift") {
            p.value = rng::uniform_symmetric(&mut r, 0.2, p.value.len());
        }
    }
    let (x_hat, z_hat) = solver.noisy_inputs(2).unwrap();
    solver.loss_and_gradients(&x_hat, &z_hat).unwrap();
    let mut targets = Vec::new();
    for (net, ps) in [(Net::Denoiser, solver.denoiser().params()), (Net::Generator, solver.generator().params())] {
        for (a, p) in ps.iter().enumerate() {
            let mut pick = rng::stream(rng::derive_seed(5, &[a as u64, matches!(net, Net::Generator) as u64]));
            let n = p.value.len();
            let picks: std::collections::BTreeSet<usize> = if n <= per_array {
                (0..n).collect()
            } else {
                rng::uniform_symmetric(&mut pick, 0.5, per_array)
                    .iter()
                    .map(|u| (((u + 0.5) * n as f64) as usize).min(n - 1))
                    .collect()
            };
            for i in picks {
                targets.push((net, a, i, p.name.clone(), p.value[i], p.grad[i]));
            }
        }
    }
    let arrays_total = solver.denoiser().params().len() + solver.generator().params().len();
    let arrays = targets.iter().map(|t| (t.1, t.3.clone())).collect::<std::collections::BTreeSet<_>>().len();
    let mut failures = Vec::new();
    let mut worst_rel = 0.0f64;
    for (net, a, i, name, v0, analytic) in &targets {
        set(&mut solver, *net, *a, *i, v0 + STEP);
        let lp = solver.loss_and_gradients(&x_hat, &z_hat).unwrap();
        set(&mut solver, *net, *a, *i, v0 - STEP);
        let lm = solver.loss_and_gradients(&x_hat, &z_hat).unwrap();
        set(&mut solver, *net, *a, *i, *v0);
        let numeric = (lp - lm) / (2.0 * STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
        worst_rel = worst_rel.max(rel);
        if rel >= REL_TOL {
            failures.push(format!("{name}[{i}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}"));
        }
    }
    GradReport {
        coordinates: targets.len(),
        arrays_checked: arrays,
        arrays_total,
        worst_rel,
        failures,
    }
}

