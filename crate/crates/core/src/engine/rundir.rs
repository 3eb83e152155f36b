//! Run directory layout:
//!
//! ```text
//! <out>/config.txt          resolved configuration (TOML, reloadable)
//! <out>/trace.csv           step,loss,psnr,ssim,kernel_lr
//! <out>/snapshots/          step_XXX_image.png, step_XXX_kernel.{txt,png}, snapshots.csv
//! <out>/result_image.png
//! <out>/result_kernel.txt
//! <out>/result_kernel.png
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{RunObserver, RunOutput, SdiConfig, StepView};
use crate::error::{Error, Result};
use crate::io;

pub const TRACE_HEADER: &str = "step,loss,psnr,ssim,kernel_lr";
const SNAPSHOT_HEADER: &str = "step,image,kernel,kernel_png,loss,psnr,ssim";

/// Outer steps that get a snapshot for cadence `every` over `T` steps, in run order.
pub fn snapshot_steps(outer_steps: usize, every: usize) -> Vec<usize> {
    if every == 0 {
        return Vec::new();
    }
    (1..=outer_steps)
        .rev()
        .filter(|&t| t % every == 0 || t == 1)
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub struct RunDirectory {
    root: PathBuf,
    snapshot_every: usize,
    trace: BufWriter<File>,
    snapshots_written: usize,
}

impl RunDirectory {
    /// Creates the directory tree and writes `config.txt` and the trace header.
    pub fn create(root: impl AsRef<Path>, config: &SdiConfig) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let snapshots = root.join("snapshots");
        fs::create_dir_all(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
        let cfg_path = root.join("config.txt");
        fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let trace_path = root.join("trace.csv");
        let file = File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        let mut trace = BufWriter::new(file);
        writeln!(trace, "{TRACE_HEADER}").map_err(|e| Error::io(&trace_path, e))?;
        trace.flush().map_err(|e| Error::io(&trace_path, e))?;
        if config.snapshot_every > 0 {
            let csv_path = snapshots.join("snapshots.csv");
            fs::write(&csv_path, format!("{SNAPSHOT_HEADER}\n")).map_err(|e| Error::io(&csv_path, e))?;
        }
        Ok(Self {
            root,
            snapshot_every: config.snapshot_every,
            trace,
            snapshots_written: 0,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshots_written(&self) -> usize {
        self.snapshots_written
    }

    fn append_trace(&mut self, view: &StepView<'_>) -> std::io::Result<()> {
        let r = view.record;
        writeln!(
            self.trace,
            "{},{},{},{},{}",
            r.step,
            r.loss,
            opt(r.psnr),
            opt(r.ssim),
            r.kernel_lr
        )?;
        self.trace.flush()
    }

    fn snapshot(&self, view: &StepView<'_>) -> Result<()> {
        let t = view.record.step;
        let dir = self.root.join("snapshots");
        let image = format!("step_{t:03}_image.png");
        let kernel = format!("step_{t:03}_kernel.txt");
        let kernel_png = format!("step_{t:03}_kernel.png");
        io::save_image(view.image, dir.join(&image))?;
        io::save_kernel(view.kernel, dir.join(&kernel))?;
        io::save_kernel_png(view.kernel, dir.join(&kernel_png))?;
        let csv_path = dir.join("snapshots.csv");
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&csv_path)
            .map_err(|e| Error::io(&csv_path, e))?;
        writeln!(
            f,
            "{t},{image},{kernel},{kernel_png},{},{},{}",
            view.record.loss,
            opt(view.record.psnr),
            opt(view.record.ssim)
        )
        .map_err(|e| Error::io(&csv_path, e))
    }

    /// Writes the final image and kernel.
    pub fn finish(&self, output: &RunOutput) -> Result<()> {
        io::save_image(&output.image, self.root.join("result_image.png"))?;
        io::save_kernel(&output.kernel, self.root.join("result_kernel.txt"))?;
        io::save_kernel_png(&output.kernel, self.root.join("result_kernel.png"))
    }
}

impl RunObserver for RunDirectory {
    fn on_step(&mut self, view: &StepView<'_>) {
        if let Err(e) = self.append_trace(view) {
            log::warn!("could not append to trace.csv: {e}");
        }
        let t = view.record.step;
        if self.snapshot_every > 0 && (t.is_multiple_of(self.snapshot_every) || t == 1) {
            match self.snapshot(view) {
                Ok(()) => self.snapshots_written += 1,
                Err(e) => log::warn!("snapshot at step {t} failed: {e}"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cadence_selects_multiples_and_last_step() {
        assert_eq!(snapshot_steps(30, 5), vec![30, 25, 20, 15, 10, 5, 1]);
        assert_eq!(snapshot_steps(4, 3), vec![3, 1]);
        assert!(snapshot_steps(10, 0).is_empty());
    }
}
