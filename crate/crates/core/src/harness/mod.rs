//! Dataset generation and batch evaluation.

pub mod bench;
pub mod pairs;
pub mod sweep;

pub use pairs::{build_pairs, build_pairs_on_disk, read_manifest, write_manifest, ManifestRow, Pair, MANIFEST_NAME};
pub use sweep::{
    run_seed, run_sweep, summarize, write_summary_csv, write_sweep_csv, SummaryRow, SweepAxis, SweepInstance,
    SweepRow, SweepSpec, SWEEP_HEADER,
};
