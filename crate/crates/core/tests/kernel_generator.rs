mod common;

use deblur_sdi::kernel_generator::{sample_latent, GeneratorMode, KernelGenConfig, KernelGenerator};
use proptest::prelude::*;

fn formula_generator(mode: GeneratorMode) -> KernelGenerator {
    let cfg = KernelGenConfig {
        hidden_dim: 16,
        num_hidden: 2,
        ..KernelGenConfig::new(mode, 5)
    };
    let mut g = KernelGenerator::new(cfg, 0).unwrap();
    for (p, param) in g.params_mut().iter_mut().enumerate() {
        for (j, v) in param.value.iter_mut().enumerate() {
            *v = 0.1 * (0.37 * (j as f64 + 1.0) + 0.11 * p as f64).sin();
        }
    }
    g
}

#[test]
fn forward_matches_matrix_oracle() {
    let golden = common::read_golden("generator_k5.csv");
    for mode in [GeneratorMode::Standard, GeneratorMode::Diffusion] {
        let g = formula_generator(mode);
        let latent: Vec<f64> = (0..g.config().latent_len()).map(|j| (0.13 * j as f64).cos()).collect();
        let k = g.generate(&latent).unwrap();
        let want: Vec<f64> = golden
            .iter()
            .filter(|r| r[0] == mode.to_string())
            .map(|r| r[2].parse().unwrap())
            .collect();
        assert_eq!(want.len(), 25);
        for (a, b) in k.weights().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{mode}: {a} vs {b}");
        }
    }
}

#[test]
fn parameter_shapes_follow_the_mode() {
    let std = KernelGenerator::new(KernelGenConfig::new(GeneratorMode::Standard, 27), 1).unwrap();
    let shapes: Vec<Vec<usize>> = std.params().iter().map(|p| p.shape.clone()).collect();
    assert_eq!(shapes, vec![vec![2000, 200], vec![2000], vec![729, 2000], vec![729]]);
    let diff = KernelGenerator::new(KernelGenConfig::new(GeneratorMode::Diffusion, 5), 1).unwrap();
    let names: Vec<&str> = diff.params().iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names.len(), 2 * 6);
    assert_eq!(diff.params().by_name("hidden1.weight").unwrap().shape, vec![1000, 25]);
    assert_eq!(diff.params().by_name("out.weight").unwrap().shape, vec![25, 1000]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn outputs_lie_on_the_simplex(seed in any::<u64>(), lseed in any::<u64>(), standard in any::<bool>(), half in 1usize..4) {
        let mode = if standard { GeneratorMode::Standard } else { GeneratorMode::Diffusion };
        let k = 2 * half + 1;
        let cfg = KernelGenConfig { hidden_dim: 24, num_hidden: 2, ..KernelGenConfig::new(mode, k) };
        let g = KernelGenerator::new(cfg, seed).unwrap();
        let z = sample_latent(mode, k, lseed).unwrap();
        prop_assert_eq!(z.fixed, standard);
        let out = g.generate(&z.values).unwrap();
        prop_assert!(out.weights().iter().all(|&w| w >= 0.0));
        prop_assert!((out.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
