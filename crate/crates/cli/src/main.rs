use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use deblur_sdi::engine::{self, KernelReg, RunDirectory, RunObserver, SdiConfig, StepView};
use deblur_sdi::forward_model::BoundaryMode;
use deblur_sdi::harness::{self, SweepAxis, SweepInstance, SweepSpec};
use deblur_sdi::kernel_generator::GeneratorMode;
use deblur_sdi::schedule::{BetaDirection, NoiseSchedule};
use deblur_sdi::{io, GroundTruth};

const THREADS_ENV: &str = "DEBLURSDI_THREADS";

#[derive(Parser)]
#[command(name = "deblursdi", version, about = "Blind image deblurring with self-diffusion")]
struct Cli {
    /// Log level for diagnostics (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deblur one image.
    Deblur(DeblurArgs),
    /// Blur sharp images with every kernel and write a manifest.
    Synth(SynthArgs),
    /// Deblur every pair of a manifest and score the results.
    Eval(EvalArgs),
    /// Vary one setting over a list of values on every pair of a manifest.
    Sweep(SweepArgs),
    /// Print the noise schedule as CSV.
    ScheduleDump(ScheduleArgs),
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

fn odd_size(s: &str) -> Result<usize, String> {
    let k: usize = s.parse().map_err(|_| format!("'{s}' is not a positive integer"))?;
    if k % 2 == 1 {
        Ok(k)
    } else {
        Err(format!("kernel size must be odd, got {k}"))
    }
}

/// Overrides for every engine setting; unset flags keep the value from
/// `--config` or the built-in default.
#[derive(Args, Default)]
struct RunArgs {
    /// TOML configuration, e.g. a `config.txt` from an earlier run.
    #[arg(long, value_parser = existing_file)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = odd_size)]
    kernel_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Outer reverse-diffusion steps T.
    #[arg(long)]
    steps: Option<usize>,
    /// Inner optimisation iterations S per outer step.
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    lambda_k: Option<f64>,
    /// l1, l1-presoftmax, sqrt-sparsity or none.
    #[arg(long)]
    kernel_reg: Option<KernelReg>,
    #[arg(long)]
    denoiser_lr: Option<f64>,
    #[arg(long)]
    kernel_lr: Option<f64>,
    #[arg(long)]
    no_kernel_lr_decay: bool,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// verbatim or reversed.
    #[arg(long)]
    beta_direction: Option<BetaDirection>,
    /// standard or diffusion.
    #[arg(long)]
    generator_mode: Option<GeneratorMode>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_hidden: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    /// circular or reflect.
    #[arg(long)]
    boundary: Option<BoundaryMode>,
    /// Snapshot cadence in outer steps; 0 disables snapshots.
    #[arg(long)]
    snapshot_every: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<SdiConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
                SdiConfig::from_toml(&text).map_err(|e| Failure::Usage(e.to_string()))?
            }
            None => SdiConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { c.$target = v; })*
            };
        }
        set!(kernel_size => kernel_size, seed => seed, steps => outer_steps, inner_iters => inner_iters,
             lambda_k => lambda_k, kernel_reg => kernel_reg, denoiser_lr => denoiser_lr, kernel_lr => kernel_lr,
             beta_start => beta_start, beta_end => beta_end, mu => mu, beta_direction => beta_direction,
             generator_mode => generator_mode, hidden_dim => hidden_dim, num_hidden => num_hidden,
             base_channels => base_channels, boundary => boundary, snapshot_every => snapshot_every);
        if self.no_kernel_lr_decay {
            c.kernel_lr_decay = false;
        }
        c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Args)]
struct DeblurArgs {
    #[arg(long, value_parser = existing_file)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sharp reference, enables PSNR/SSIM in the trace.
    #[arg(long, value_parser = existing_file)]
    ground_truth: Option<PathBuf>,
    /// Reference kernel file, enables kernel similarity reporting.
    #[arg(long, value_parser = existing_file)]
    true_kernel: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Sharp images (files or directories of PNG images).
    #[arg(long, num_args = 1.., required = true)]
    images: Vec<PathBuf>,
    /// Kernel text files (files or directories of .txt kernels).
    #[arg(long, num_args = 1.., required = true)]
    kernels: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "circular")]
    boundary: BoundaryMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest written by `synth`.
    #[arg(long, value_parser = existing_file)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// kernel_size, T, S or generator.
    #[arg(long)]
    axis: SweepAxis,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    values: String,
    #[arg(long, value_parser = existing_file)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = deblur_sdi::schedule::DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = deblur_sdi::schedule::DEFAULT_BETA_START)]
    beta_start: f64,
    #[arg(long, default_value_t = deblur_sdi::schedule::DEFAULT_BETA_END)]
    beta_end: f64,
    #[arg(long, default_value_t = deblur_sdi::schedule::DEFAULT_MU)]
    mu: f64,
    #[arg(long, default_value = "verbatim")]
    beta_direction: BetaDirection,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<deblur_sdi::Error> for Failure {
    fn from(e: deblur_sdi::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn workers() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(available),
        _ => available,
    }
}

/// Writes the run directory and prints one progress line per outer step:
/// `step=<t>/<T> loss=<l> sigma=<σ_t> elapsed_s=<s>`.
struct Progress {
    dir: RunDirectory,
    total: usize,
    started: Instant,
}

impl RunObserver for Progress {
    fn on_step(&mut self, view: &StepView<'_>) {
        self.dir.on_step(view);
        let r = view.record;
        eprintln!(
            "step={}/{} loss={:.6e} sigma={:.6} elapsed_s={:.2}",
            r.step,
            self.total,
            r.loss,
            r.sigma,
            self.started.elapsed().as_secs_f64()
        );
    }
}

fn deblur(args: &DeblurArgs) -> Result<(), Failure> {
    let config = args.run.resolve()?;
    let observation = io::load_image(&args.input).map_err(|e| Failure::Runtime(e.to_string()))?;
    let ground_truth = match &args.ground_truth {
        Some(p) => Some(GroundTruth {
            image: io::load_image(p).map_err(|e| Failure::Runtime(e.to_string()))?,
            kernel: args.true_kernel.as_ref().map(io::load_kernel).transpose().map_err(|e| Failure::Runtime(e.to_string()))?,
        }),
        None => None,
    };
    let mut progress = Progress {
        dir: RunDirectory::create(&args.out, &config).map_err(|e| Failure::Runtime(e.to_string()))?,
        total: config.outer_steps,
        started: Instant::now(),
    };
    let out = engine::run(&observation, &config, ground_truth.as_ref(), &mut progress)?;
    progress.dir.finish(&out).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}

fn collect_files(inputs: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(Failure::Usage(format!("no such file or directory: {}", p.display())));
        }
    }
    Ok(files)
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let images = collect_files(&args.images, "png")?;
    let kernels = collect_files(&args.kernels, "txt")?;
    let rows = harness::build_pairs_on_disk(&images, &kernels, args.noise_std, args.seed, args.boundary, &args.out)?;
    let made = rows.iter().filter(|r| !r.blurred.is_empty()).count();
    eprintln!("wrote {made} of {} pairs to {}", rows.len(), args.out.display());
    Ok(())
}

fn resolve_near(manifest_dir: &Path, p: &str) -> PathBuf {
    let direct = PathBuf::from(p);
    if direct.is_absolute() || direct.exists() {
        direct
    } else {
        manifest_dir.join(p)
    }
}

fn load_instances(manifest: &Path) -> Result<Vec<SweepInstance>, Failure> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut instances = Vec::new();
    for row in harness::read_manifest(manifest).map_err(|e| Failure::Runtime(e.to_string()))? {
        if row.blurred.is_empty() {
            log::warn!("skipping {} x {}: no blurred image", row.image, row.kernel);
            continue;
        }
        let load = || -> deblur_sdi::Result<SweepInstance> {
            Ok(SweepInstance {
                name: row.blurred.clone(),
                observation: io::load_image(dir.join(&row.blurred))?,
                sharp: io::load_image(resolve_near(dir, &row.image))?,
                kernel: Some(io::load_kernel(resolve_near(dir, &row.kernel))?),
            })
        };
        match load() {
            Ok(i) => instances.push(i),
            Err(e) => log::warn!("skipping {}: {e}", row.blurred),
        }
    }
    if instances.is_empty() {
        return Err(Failure::Runtime(format!("no usable pairs in {}", manifest.display())));
    }
    Ok(instances)
}

fn write_results(out: &Path, name: &str, rows: &[harness::SweepRow]) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    harness::write_sweep_csv(&out.join(format!("{name}.csv")), rows)?;
    harness::write_summary_csv(&out.join(format!("{name}_summary.csv")), &harness::summarize(rows))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!("{} runs, {failed} failed; results in {}", rows.len(), out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let base = args.run.resolve()?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    fs::write(args.out.join("config.txt"), base.to_toml()).map_err(|e| Failure::Runtime(e.to_string()))?;
    let spec = SweepSpec {
        axis: SweepAxis::KernelSize,
        values: vec![base.kernel_size.to_string()],
        instances: load_instances(&args.manifest)?,
        base,
        workers: workers(),
    };
    let rows = harness::run_sweep(&spec)?;
    write_results(&args.out, "eval", &rows)
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let base = args.run.resolve()?;
    let values = args.axis.parse_values(&args.values).map_err(|e| Failure::Usage(e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    fs::write(args.out.join("config.txt"), base.to_toml()).map_err(|e| Failure::Runtime(e.to_string()))?;
    let spec = SweepSpec {
        axis: args.axis,
        values,
        instances: load_instances(&args.manifest)?,
        base,
        workers: workers(),
    };
    let rows = harness::run_sweep(&spec)?;
    write_results(&args.out, "sweep", &rows)
}

fn schedule_dump(args: &ScheduleArgs) -> Result<(), Failure> {
    let s = NoiseSchedule::build_with(args.steps, args.beta_start, args.beta_end, args.mu, args.beta_direction)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    match &args.out {
        Some(path) => {
            let f = fs::File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            s.write_csv(f)?;
        }
        None => s.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    let result = match &cli.command {
        Command::Deblur(a) => deblur(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::ScheduleDump(a) => schedule_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
