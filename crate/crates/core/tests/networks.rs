mod common;

use deblur_sdi::denoiser::{Denoiser, DenoiserConfig};
use deblur_sdi::nn::{FeatureMap, NonLocalBlock, ParamSet};
use deblur_sdi::nn::layers::sigmoid;
use deblur_sdi::rng;
use deblur_sdi::ImageTensor;
use proptest::prelude::*;

fn formula(p: usize, j: usize) -> f64 {
    0.3 * (0.71 * (j as f64 + 1.0) + 0.53 * p as f64).sin()
}

fn formula_block(channels: usize) -> (ParamSet, NonLocalBlock) {
    let mut ps = ParamSet::new();
    let block = NonLocalBlock::new(&mut ps, "nl", channels, &mut rng::stream(0));
    for (p, param) in ps.iter_mut().enumerate() {
        for (j, v) in param.value.iter_mut().enumerate() {
            *v = formula(p, j);
        }
    }
    (ps, block)
}

/// Explicit-loop embedded-Gaussian attention with a residual output.
fn nonlocal_oracle(ps: &ParamSet, x: &FeatureMap) -> Vec<f64> {
    let (c, n) = (x.channels, x.height * x.width);
    let inner = c / 2;
    let w = |name: &str| ps.by_name(name).unwrap().value.clone();
    let proj = |wname: &str, bname: &str, out: usize, inp: usize, src: &[f64]| {
        let (wt, b) = (w(wname), w(bname));
        let mut r = vec![0.0; out * n];
        for o in 0..out {
            for i in 0..n {
                let mut acc = b[o];
                for k in 0..inp {
                    acc += wt[o * inp + k] * src[k * n + i];
                }
                r[o * n + i] = acc;
            }
        }
        r
    };
    let th = proj("nl.theta.weight", "nl.theta.bias", inner, c, &x.data);
    let ph = proj("nl.phi.weight", "nl.phi.bias", inner, c, &x.data);
    let g = proj("nl.g.weight", "nl.g.bias", inner, c, &x.data);
    let mut y = vec![0.0; inner * n];
    for i in 0..n {
        let f: Vec<f64> = (0..n).map(|j| (0..inner).map(|k| th[k * n + i] * ph[k * n + j]).sum()).collect();
        let z: f64 = f.iter().map(|v| v.exp()).sum();
        for k in 0..inner {
            y[k * n + i] = (0..n).map(|j| f[j].exp() / z * g[k * n + j]).sum();
        }
    }
    let mut out = proj("nl.out.weight", "nl.out.bias", c, inner, &y);
    for (o, xv) in out.iter_mut().zip(&x.data) {
        *o += xv;
    }
    out
}

#[test]
fn nonlocal_matches_loop_oracle() {
    let (ps, block) = formula_block(4);
    let x = FeatureMap::new(4, 2, 2, (0..16).map(|i| (0.9 * i as f64).cos()).collect());
    let (y, _) = block.forward(&ps, &x).unwrap();
    for (a, b) in y.data.iter().zip(nonlocal_oracle(&ps, &x)) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn nonlocal_backward_matches_finite_differences() {
    let (mut ps, block) = formula_block(4);
    let x = FeatureMap::new(4, 3, 2, (0..24).map(|i| (0.4 * i as f64).sin()).collect());
    let weights: Vec<f64> = (0..24).map(|i| 1.0 + 0.1 * i as f64).collect();
    let loss = |ps: &ParamSet, x: &FeatureMap| -> f64 {
        block.forward(ps, x).unwrap().0.data.iter().zip(&weights).map(|(a, w)| a * w).sum()
    };
    ps.zero_grad();
    let (_, cache) = block.forward(&ps, &x).unwrap();
    let gx = block.backward(&mut ps, &cache, &FeatureMap::new(4, 3, 2, weights.clone()));
    let h = 1e-6;
    for i in 0..24 {
        let mut xp = x.clone();
        xp.data[i] += h;
        let mut xm = x.clone();
        xm.data[i] -= h;
        let fd = (loss(&ps, &xp) - loss(&ps, &xm)) / (2.0 * h);
        assert!((fd - gx.data[i]).abs() < 1e-6 * fd.abs().max(1.0), "input {i}");
    }
    let grads: Vec<(String, Vec<f64>)> = ps.iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    for (name, g) in grads {
        for j in 0..g.len() {
            let base = ps.by_name(&name).unwrap().value[j];
            ps.by_name_mut(&name).unwrap().value[j] = base + h;
            let lp = loss(&ps, &x);
            ps.by_name_mut(&name).unwrap().value[j] = base - h;
            let lm = loss(&ps, &x);
            ps.by_name_mut(&name).unwrap().value[j] = base;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * fd.abs().max(1.0), "{name}[{j}]: {fd} vs {}", g[j]);
        }
    }
}

fn small_denoiser(seed: u64) -> Denoiser {
    Denoiser::new(DenoiserConfig::new(1, 8), seed).unwrap()
}

#[test]
fn head_bias_gradient_has_closed_form() {
    let mut d = small_denoiser(4);
    let b = 0.3;
    for p in d.params_mut().iter_mut() {
        if p.name == "head.weight" {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        if p.name == "head.bias" {
            p.value[0] = b;
        }
    }
    let x = common::random_image(1, 16, 16, 1);
    let y = common::random_image(2, 16, 16, 1);
    let (out, cache) = d.forward(&x).unwrap();
    let s = sigmoid(b);
    assert!(out.data().iter().all(|&v| v == s));
    let grad = ImageTensor::new(16, 16, 1, out.data().iter().zip(y.data()).map(|(o, t)| 2.0 * (o - t)).collect()).unwrap();
    d.params_mut().zero_grad();
    d.backward(&cache, &grad);
    let expected = 2.0 * s * (1.0 - s) * y.data().iter().map(|t| s - t).sum::<f64>();
    let got = d.params().by_name("head.bias").unwrap().grad[0];
    assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0), "{got} vs {expected}");
}

#[test]
fn fixed_seed_output_is_frozen() {
    let d = small_denoiser(0);
    let x = ImageTensor::from_fn(16, 16, 1, |_, y, x| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
    let out = d.denoise(&x).unwrap();
    let sum: f64 = out.data().iter().sum();
    let sq: f64 = out.data().iter().map(|v| v * v).sum();
    assert!((sum - SELF_GOLDEN_SUM).abs() < 1e-9, "{sum:.15e}");
    assert!((sq - SELF_GOLDEN_SQ).abs() < 1e-9, "{sq:.15e}");
}

// frozen from the first run of this implementation; guards against silent drift
const SELF_GOLDEN_SUM: f64 = 1.219599440127360e2;
const SELF_GOLDEN_SQ: f64 = 5.978561296067263e1;

#[test]
fn different_seeds_give_different_networks() {
    let x = common::random_image(3, 16, 16, 1);
    let a = small_denoiser(1).denoise(&x).unwrap();
    let b = small_denoiser(1).denoise(&x).unwrap();
    let c = small_denoiser(2).denoise(&x).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_shape_and_range(h in 16usize..40, w in 16usize..40, color in any::<bool>(), s in any::<u64>()) {
        let c = if color { 3 } else { 1 };
        let d = Denoiser::new(DenoiserConfig::new(c, 8), s).unwrap();
        let input = ImageTensor::new(h, w, c, rng::gaussian(s, h * w * c)).unwrap();
        let out = d.denoise(&input).unwrap();
        prop_assert!(out.same_shape(&input));
        prop_assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
