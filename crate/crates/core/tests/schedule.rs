mod common;

use deblur_sdi::schedule::{perturb, BetaDirection, NoiseSchedule};
use proptest::prelude::*;

#[test]
fn default_table_matches_exact_rational_oracle() {
    let s = NoiseSchedule::default();
    let golden = common::read_golden("schedule_T30.csv");
    assert_eq!(golden.len(), 30);
    for (i, row) in golden.iter().enumerate() {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[0] as usize, i + 1);
        for (got, want) in [(s.beta[i], v[1]), (s.alpha_bar[i], v[2]), (s.sigma[i], v[3]), (s.sigma_kernel[i], v[4])] {
            assert!((got - want).abs() <= 1e-12, "row {}: {got} vs {want}", i + 1);
        }
    }
    assert_eq!(s.beta[0], 2e-2);
    assert_eq!(s.beta[29], 1e-4);
}

#[test]
fn csv_dump_round_trips() {
    let s = NoiseSchedule::default();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,beta,alpha_bar,sigma,sigma_kernel"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 30);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[1], s.beta[i]);
        assert_eq!(r[3], s.sigma[i]);
    }
}

#[test]
fn reversed_direction_flips_betas() {
    let a = NoiseSchedule::default();
    let b = NoiseSchedule::build_with(30, 1e-4, 2e-2, 0.15, BetaDirection::Reversed).unwrap();
    let mut rev = a.beta.clone();
    rev.reverse();
    for (x, y) in b.beta.iter().zip(&rev) {
        assert!((x - y).abs() < 1e-16);
    }
    assert_eq!((b.beta[0], b.beta[29]), (1e-4, 2e-2));
}

#[test]
fn invalid_parameters_rejected() {
    assert!(NoiseSchedule::build(1, 1e-4, 2e-2, 0.15).is_err());
    assert!(NoiseSchedule::build(10, 0.0, 2e-2, 0.15).is_err());
    assert!(NoiseSchedule::build(10, 1e-4, 1.0, 0.15).is_err());
    assert!(NoiseSchedule::build(10, 1e-4, 2e-2, -1.0).is_err());
}

proptest! {
    #[test]
    fn schedule_invariants(t in 2usize..200, a in 1e-6f64..0.5, b in 1e-6f64..0.5, mu in 1e-3f64..2.0) {
        let s = NoiseSchedule::build(t, a, b, mu).unwrap();
        prop_assert_eq!(s.beta.len(), t);
        for i in 0..t {
            prop_assert!(s.beta[i] > 0.0 && s.beta[i] < 1.0);
            prop_assert!(s.alpha_bar[i] > 0.0 && s.alpha_bar[i] < 1.0);
            prop_assert!((s.sigma[i].powi(2) + s.alpha_bar[i] - 1.0).abs() < 1e-12);
            prop_assert_eq!(s.sigma_kernel[i], mu * s.sigma[i]);
            if i > 0 {
                prop_assert!(s.alpha_bar[i] < s.alpha_bar[i - 1]);
            }
        }
    }

    #[test]
    fn zero_sigma_perturbation_is_identity(v in prop::collection::vec(-5.0f64..5.0, 1..50), seed in any::<u64>()) {
        prop_assert_eq!(perturb(&v, 0.0, seed).unwrap(), v);
    }
}
