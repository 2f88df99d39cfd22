//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cocoa_core::solver::TrainConfig;

use crate::commands::{
    cmd_correct_loop, cmd_deconv, cmd_estimate, cmd_gs, cmd_metrics, cmd_psf, cmd_simulate, run_in, DeconvMode, MetricsInputs,
    PsfSource, Truth,
};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::sweep::cmd_sweep;

#[derive(Debug, Parser)]
#[command(name = "cocoa", version, about = "Joint wavefront aberration and 3D structure estimation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; omitted keys take built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; nested seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Iteration count of the command's main optimizer.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, env = "COCOA_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimateMode {
    /// 2000 training iterations.
    Slice,
    /// 1000 training iterations.
    InVivo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DeconvArg {
    Nonblind,
    Blind,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the 3D PSF of the configured aberration.
    Psf,
    /// Simulate a phantom, its clean stack and its noisy stack.
    Simulate,
    /// Estimate aberration and structure from a stack.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<EstimateMode>,
        /// True aberration JSON, for the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// True structure TIFF, for the report.
        #[arg(long)]
        truth_structure: Option<PathBuf>,
    },
    /// Richardson–Lucy deconvolution.
    Deconv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "nonblind")]
        mode: DeconvArg,
        #[arg(long)]
        psf: Option<PathBuf>,
        #[arg(long)]
        aberration: Option<PathBuf>,
    },
    /// Degradation sweep with cutoff fits.
    Sweep,
    /// Simulated correction loop on the configured aberration.
    CorrectLoop,
    /// Gerchberg–Saxton phase retrieval from a bead stack.
    Gs {
        #[arg(long)]
        input: PathBuf,
    },
    /// Metrics of a stack, optionally against a reference.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
}

/// Config file, then flags, then derived seeds.
pub fn resolve(common: &Common, command: &Command) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Command::Estimate { mode: Some(m), .. } = command {
        config.train.train_iterations = match m {
            EstimateMode::Slice => TrainConfig::default().train_iterations,
            EstimateMode::InVivo => TrainConfig::in_vivo().train_iterations,
        }
    }
    if let Some(n) = common.iterations {
        match command {
            Command::Deconv { .. } => config.rld.iterations = n,
            Command::Gs { .. } => config.gs.iterations = n,
            _ => config.train.train_iterations = n,
        }
    }
    config.derive_seeds();
    config.validate()?;
    Ok(config)
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    init_threads(cli.common.threads)?;
    let config = resolve(&cli.common, &cli.command)?;
    let out: &Path = &cli.common.out;
    let paths = match &cli.command {
        Command::Psf => run_in(out, &config, |o| cmd_psf(&config, o)),
        Command::Simulate => run_in(out, &config, |o| cmd_simulate(&config, o)),
        Command::Estimate { input, truth, truth_structure, .. } => {
            let t = Truth { aberration: truth.clone(), structure: truth_structure.clone() };
            run_in(out, &config, |o| cmd_estimate(&config, input, &t, o))
        }
        Command::Deconv { input, mode, psf, aberration } => {
            let mode = match mode {
                DeconvArg::Nonblind => DeconvMode::NonBlind,
                DeconvArg::Blind => DeconvMode::Blind,
            };
            let source = PsfSource { psf: psf.clone(), aberration: aberration.clone() };
            run_in(out, &config, |o| cmd_deconv(&config, input, mode, &source, o))
        }
        Command::Sweep => {
            config.sweep.validate()?;
            run_in(out, &config, |o| cmd_sweep(&config, o))
        }
        Command::CorrectLoop => run_in(out, &config, |o| cmd_correct_loop(&config, o)),
        Command::Gs { input } => run_in(out, &config, |o| cmd_gs(&config, input, o)),
        Command::Metrics { input, reference, truth, estimate } => {
            let extra = MetricsInputs { reference: reference.clone(), truth: truth.clone(), estimate: estimate.clone() };
            run_in(out, &config, |o| cmd_metrics(&config, input, &extra, o))
        }
    }?;
    for p in &paths {
        log::info!("wrote {}", p.display());
    }
    Ok(paths)
}
