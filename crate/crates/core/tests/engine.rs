mod common;

use std::fs;

use common::{brute_convolve, random_image, random_kernel};
use deblur_sdi::engine::{composite_loss, run, snapshot_steps, KernelReg, RunDirectory, Silent, SdiConfig, Solver, StepView, TRACE_HEADER};
use deblur_sdi::forward_model::{synthesize_observation, BoundaryMode};
use deblur_sdi::{io, BlurKernel, GroundTruth, ImageTensor};

fn small_config() -> SdiConfig {
    SdiConfig {
        outer_steps: 3,
        inner_iters: 3,
        kernel_size: 5,
        base_channels: 8,
        hidden_dim: 32,
        num_hidden: 2,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn composite_loss_matches_scalar_oracle() {
    let x = random_image(1, 8, 8, 1);
    let k = random_kernel(2, 3);
    let y = random_image(3, 8, 8, 1);
    for b in [BoundaryMode::Circular, BoundaryMode::Reflect] {
        let blurred = brute_convolve(&x, &k, b);
        let data: f64 = blurred.iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum();
        let reg: f64 = k.weights().iter().map(|w| w.abs()).sum();
        let want = data + 2e-3 * reg;
        let got = composite_loss(&x, &k, &y, 2e-3, KernelReg::L1, b).unwrap();
        assert!((got - want).abs() < 1e-12 * want, "{b}: {got} vs {want}");
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let y = random_image(4, 16, 16, 1);
    let a = run(&y, &small_config(), None, &mut Silent).unwrap();
    let b = run(&y, &small_config(), None, &mut Silent).unwrap();
    assert_eq!(a.image.data(), b.image.data());
    assert_eq!(a.kernel.weights(), b.kernel.weights());
    for (ra, rb) in a.trace.iter().zip(&b.trace) {
        assert_eq!((ra.step, ra.loss, ra.first_loss, ra.kernel_lr), (rb.step, rb.loss, rb.first_loss, rb.kernel_lr));
    }
    let c = run(&y, &SdiConfig { seed: 22, ..small_config() }, None, &mut Silent).unwrap();
    assert_ne!(a.image.data(), c.image.data());
}

#[test]
fn trace_has_one_finite_record_per_step() {
    let y = random_image(5, 16, 16, 3);
    let sharp = random_image(6, 16, 16, 3);
    let gt = GroundTruth { image: sharp, kernel: Some(random_kernel(1, 5)) };
    let out = run(&y, &small_config(), Some(&gt), &mut Silent).unwrap();
    assert_eq!(out.trace.iter().map(|r| r.step).collect::<Vec<_>>(), vec![3, 2, 1]);
    for r in &out.trace {
        assert!(r.loss.is_finite() && r.first_loss.is_finite());
        assert!(r.psnr.is_some() && r.ssim.is_some() && r.kernel_similarity.is_some());
    }
    assert!(out.image.in_unit_range());
    assert!((out.kernel.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn noise_is_sampled_once_per_step_and_handed_off_exactly() {
    let y = random_image(7, 16, 16, 1);
    let cfg = small_config();
    let mut a = Solver::new(&y, &cfg).unwrap();
    let mut b = Solver::new(&y, &cfg).unwrap();
    let t = cfg.outer_steps;
    let (x_hat, z_hat) = b.noisy_inputs(t).unwrap();
    assert_eq!(b.noisy_inputs(t).unwrap().0.data(), x_hat.data());
    for _ in 0..cfg.inner_iters {
        b.inner_iteration(&x_hat, &z_hat).unwrap();
    }
    let expected_image = b.denoiser().denoise(&x_hat).unwrap();
    let expected_kernel = b.generator().generate(&z_hat).unwrap();
    let (_, image, kernel) = a.outer_step(t, None).unwrap();
    assert_eq!(image.data(), expected_image.data());
    assert_eq!(kernel.weights(), expected_kernel.weights());
    assert_eq!(a.image().data(), expected_image.data());
    // diffusion mode feeds the kernel back as the next latent
    assert_eq!(a.latent(), expected_kernel.weights());
}

#[test]
fn zero_kernel_rate_freezes_the_generator() {
    let y = random_image(8, 16, 16, 1);
    let cfg = SdiConfig { kernel_lr: 0.0, ..small_config() };
    let mut s = Solver::new(&y, &cfg).unwrap();
    let before: Vec<Vec<f64>> = s.generator().params().iter().map(|p| p.value.clone()).collect();
    let den_before: Vec<Vec<f64>> = s.denoiser().params().iter().map(|p| p.value.clone()).collect();
    for t in (1..=3).rev() {
        s.outer_step(t, None).unwrap();
    }
    let after: Vec<Vec<f64>> = s.generator().params().iter().map(|p| p.value.clone()).collect();
    let den_after: Vec<Vec<f64>> = s.denoiser().params().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
    assert_ne!(den_before, den_after);
    assert_eq!(s.kernel_lr(), 0.0);
}

#[test]
fn inner_loss_decreases_within_most_steps() {
    let sharp = random_image(9, 16, 16, 1).map(|v| (v * 4.0).round() / 4.0).unwrap();
    let y = synthesize_observation(&sharp, &random_kernel(3, 3), BoundaryMode::Circular, 0.0, 0).unwrap();
    let cfg = SdiConfig { outer_steps: 6, inner_iters: 15, ..small_config() };
    let out = run(&y, &cfg, None, &mut Silent).unwrap();
    let ok = out.trace.iter().filter(|r| r.loss <= r.first_loss).count();
    assert!(ok * 100 >= 95 * out.trace.len(), "{ok} of {}", out.trace.len());
}

#[test]
fn delta_blur_recovers_a_centered_kernel() {
    let sharp = ImageTensor::from_fn(32, 32, 1, |_, y, x| {
        let block = ((x / 6) + (y / 5)) % 2 == 0;
        if block { 0.8 } else { 0.2 }
    })
    .unwrap();
    let y = synthesize_observation(&sharp, &BlurKernel::delta(5).unwrap(), BoundaryMode::Circular, 0.0, 0).unwrap();
    let cfg = SdiConfig { outer_steps: 5, inner_iters: 20, kernel_size: 5, base_channels: 16, seed: 1, ..Default::default() };
    let out = run(&y, &cfg, None, &mut Silent).unwrap();
    let k = &out.kernel;
    assert_eq!(k.argmax(), (2, 2), "{:?}", k.weights());
    assert!(k.get(2, 2) >= 0.5, "center mass {}", k.get(2, 2));
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let cfg = SdiConfig { outer_steps: 4, inner_iters: 1, snapshot_every: 3, ..small_config() };
    let y = random_image(10, 16, 16, 1);
    let mut rd = RunDirectory::create(&root, &cfg).unwrap();
    let out = run(&y, &cfg, None, &mut rd).unwrap();
    rd.finish(&out).unwrap();
    assert_eq!(rd.snapshots_written(), snapshot_steps(4, 3).len());
    let trace = fs::read_to_string(root.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], TRACE_HEADER);
    assert_eq!(lines.len(), 5);
    let snaps = fs::read_to_string(root.join("snapshots/snapshots.csv")).unwrap();
    assert_eq!(snaps.lines().count(), 1 + 2);
    for f in ["step_003_image.png", "step_001_kernel.txt", "step_001_kernel.png"] {
        assert!(root.join("snapshots").join(f).exists(), "{f}");
    }
    let reloaded = SdiConfig::from_toml(&fs::read_to_string(root.join("config.txt")).unwrap()).unwrap();
    assert_eq!(reloaded, cfg);
    let k = io::load_kernel(root.join("result_kernel.txt")).unwrap();
    for (a, b) in k.weights().iter().zip(out.kernel.weights()) {
        assert!((a - b).abs() < 1e-12);
    }
    let png = image::open(root.join("result_kernel.png")).unwrap().to_luma8();
    assert_eq!(png.pixels().map(|p| p.0[0]).max(), Some(255));
    assert_eq!(io::load_image(root.join("result_image.png")).unwrap().height(), 16);
}

#[test]
fn observer_sees_every_step() {
    let y = random_image(11, 16, 16, 1);
    let mut seen = Vec::new();
    run(&y, &small_config(), None, &mut |v: &StepView<'_>| seen.push(v.record.step)).unwrap();
    assert_eq!(seen, vec![3, 2, 1]);
}

#[test]
fn invalid_configurations_are_rejected() {
    let y = random_image(12, 16, 16, 1);
    for cfg in [
        SdiConfig { outer_steps: 1, ..small_config() },
        SdiConfig { inner_iters: 0, ..small_config() },
        SdiConfig { kernel_size: 4, ..small_config() },
        SdiConfig { lambda_k: -1.0, ..small_config() },
        SdiConfig { kernel_size: 17, ..small_config() },
    ] {
        assert!(run(&y, &cfg, None, &mut Silent).is_err());
    }
    assert!(SdiConfig::from_toml("bogus_key = 3").is_err());
}
