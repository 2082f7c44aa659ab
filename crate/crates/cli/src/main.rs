//! `cdtvd`: synthetic data, training, super-resolution and evaluation
//! pipelines driven by a JSON config.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};

/// Environment variable capping the number of worker threads.
const THREADS_ENV: &str = "CDTVD_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cdtvd", version, about = "Diffusion super-resolution of time-varying volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed; sub-seeds for data, training, sampling and rendering derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write into an existing non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Input series directory; repeat for several.
    #[arg(long, global = true)]
    input: Vec<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    hr: Option<PathBuf>,
    #[arg(long, global = true)]
    lr: Option<PathBuf>,
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    #[arg(long, global = true)]
    recon: Option<PathBuf>,
    /// Fine-tuning timestep.
    #[arg(long, global = true)]
    keyframe: Option<i64>,
    /// Downsampling factor.
    #[arg(long, global = true)]
    factor: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an analytic time-varying field.
    GenSynthetic {
        /// `abc_flow` or `gaussian_blobs`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Trilinearly downsample every frame of a series.
    Downsample,
    /// Print per-frame entropies and the selected keyframe.
    SelectKeyframe,
    /// Train both networks on HR series.
    Pretrain,
    /// Adapt a pretrained checkpoint to one HR keyframe.
    Finetune,
    /// Upsample an LR series with a fine-tuned checkpoint.
    SuperResolve,
    /// Score a reconstruction against the ground truth.
    Evaluate,
    /// Sweep the contrastive weight over the desk experiment.
    GridBeta {
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic { .. } => "gen-synthetic",
            Command::Downsample => "downsample",
            Command::SelectKeyframe => "select-keyframe",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::SuperResolve => "super-resolve",
            Command::Evaluate => "evaluate",
            Command::GridBeta { .. } => "grid-beta",
        }
    }
}

/// Applies flags over the file configuration.
fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let c = &cli.common;
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if !c.input.is_empty() {
        cfg.input = c.input.clone();
    }
    for (flag, slot) in [
        (&c.checkpoint, &mut cfg.checkpoint),
        (&c.hr, &mut cfg.hr),
        (&c.lr, &mut cfg.lr),
        (&c.truth, &mut cfg.truth),
        (&c.recon, &mut cfg.recon),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    if c.keyframe.is_some() {
        cfg.keyframe = c.keyframe;
    }
    if let Some(f) = c.factor {
        cfg.factor = f;
    }
    match &cli.command {
        Command::GenSynthetic { kind, size, frames } => {
            if let Some(k) = kind {
                cfg.synthetic.kind = k.clone();
            }
            if let Some(s) = size {
                cfg.synthetic.size = *s;
            }
            if let Some(f) = frames {
                cfg.synthetic.frames = *f;
            }
        }
        Command::GridBeta { betas: Some(b) } => cfg.betas = b.clone(),
        _ => {}
    }
    Ok(cfg)
}

/// Creates the output directory, refusing a non-empty one without `force`.
fn prepare_out(out: &Path, force: bool) -> CliResult<()> {
    if out.exists() {
        if !out.is_dir() {
            return Err(CliError::Config(format!("output {} is not a directory", out.display())));
        }
        let non_empty = std::fs::read_dir(out)
            .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let cfg = effective_config(&cli)?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("missing output directory (flag --out or config key `out`)".into()))?;
    prepare_out(&out, cli.common.force)?;
    let inputs = match cli.command {
        Command::GenSynthetic { .. } => commands::gen_synthetic(&cfg, &out)?,
        Command::Downsample => commands::downsample(&cfg, &out)?,
        Command::SelectKeyframe => commands::select(&cfg, &out)?,
        Command::Pretrain => commands::run_pretrain(&cfg, &out)?,
        Command::Finetune => commands::run_finetune(&cfg, &out)?,
        Command::SuperResolve => commands::run_superresolve(&cfg, &out)?,
        Command::Evaluate => commands::evaluate(&cfg, &out)?,
        Command::GridBeta { .. } => commands::grid_beta(&cfg, &out)?,
    };
    manifest::write_manifest(cli.command.name(), &cfg, inputs, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
