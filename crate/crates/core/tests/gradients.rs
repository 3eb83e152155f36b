mod common;

use common::gradcheck::run_check;
use deblur_sdi::engine::KernelReg;

#[test]
fn full_objective_gradients_match_finite_differences() {
    let r = run_check(KernelReg::SqrtSparsity, 3);
    assert!(r.coordinates >= 200, "only {} coordinates", r.coordinates);
    assert_eq!(r.arrays_checked, r.arrays_total);
    assert!(r.failures.is_empty(), "{} of {} failed:\n{}", r.failures.len(), r.coordinates, r.failures.join("\n"));
}

#[test]
fn alternative_regularizer_gradients_match_finite_differences() {
    let r = run_check(KernelReg::L1Presoftmax, 1);
    assert!(r.failures.is_empty(), "{}", r.failures.join("\n"));
}
