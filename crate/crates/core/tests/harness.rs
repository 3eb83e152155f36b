mod common;

use std::fs;

use common::{random_image, random_kernel};
use deblur_sdi::engine::SdiConfig;
use deblur_sdi::forward_model::{synthesize_observation, BoundaryMode};
use deblur_sdi::harness::{run_sweep, summarize, write_summary_csv, write_sweep_csv, SweepAxis, SweepInstance, SweepSpec, SWEEP_HEADER};

fn instance(seed: u64) -> SweepInstance {
    let sharp = random_image(seed, 16, 16, 1);
    let kernel = random_kernel(seed + 1, 3);
    SweepInstance {
        name: format!("inst{seed}"),
        observation: synthesize_observation(&sharp, &kernel, BoundaryMode::Circular, 0.0, seed).unwrap(),
        sharp,
        kernel: Some(kernel),
    }
}

fn spec(values: &str, workers: usize) -> SweepSpec {
    SweepSpec {
        axis: SweepAxis::KernelSize,
        values: SweepAxis::KernelSize.parse_values(values).unwrap(),
        base: SdiConfig {
            outer_steps: 2,
            inner_iters: 2,
            base_channels: 8,
            hidden_dim: 16,
            num_hidden: 1,
            ..Default::default()
        },
        instances: vec![instance(1), instance(5)],
        workers,
    }
}

#[test]
fn sweep_records_failures_and_keeps_order() {
    // K = 17 exceeds the 16×16 instances and must fail without stopping the sweep
    let rows = run_sweep(&spec("3,17,5", 2)).unwrap();
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r.axis_value.as_str(), r.instance.as_str())).collect();
    assert_eq!(
        keys,
        vec![("3", "inst1"), ("3", "inst5"), ("17", "inst1"), ("17", "inst5"), ("5", "inst1"), ("5", "inst5")]
    );
    assert!(rows[2].error.is_some() && rows[3].error.is_some());
    assert!(rows.iter().filter(|r| r.axis_value != "17").all(|r| r.psnr.is_some() && r.kernel_sim.is_some()));
    let summary = summarize(&rows);
    assert_eq!(summary[1].failed, 2);
    assert_eq!(summary[1].psnr_mean, None);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some(SWEEP_HEADER));
    assert_eq!(text.lines().count(), 7);
    write_summary_csv(&dir.path().join("summary.csv"), &summary).unwrap();
}

#[test]
fn worker_count_does_not_change_results() {
    let a = run_sweep(&spec("3", 1)).unwrap();
    let b = run_sweep(&spec("3", 3)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.psnr, x.ssim, x.kernel_sim), (y.psnr, y.ssim, y.kernel_sim));
    }
}
