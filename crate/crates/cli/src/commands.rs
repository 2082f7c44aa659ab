use std::path::{Path, PathBuf};

use cdtvd_core::keyframe::{entropy_table, select_keyframe};
use cdtvd_core::metrics::{evaluate_series, line_chart_png};
use cdtvd_core::trainer::{
    best_beta, derive_seed, finetune, grid_search_beta, load_checkpoint, pretrain, save_checkpoint, superresolve,
    ExperimentConfig, TrainConfig, TrainLog,
};
use cdtvd_core::volume::{load_raw, make_synthetic, save_raw, trilinear_downsample, GridSpec, TimeSeries};

use crate::config::{required, RunConfig};
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Paths the command read, for the manifest.
pub type Inputs = Vec<PathBuf>;

fn load(path: &Path) -> CliResult<TimeSeries> {
    Ok(load_raw(path)?)
}

fn write_log(log: &TrainLog, out: &Path, name: &str) -> CliResult<()> {
    log.write_csv(&out.join(format!("{name}.csv")))?;
    let totals: Vec<f64> = log.records.iter().map(|r| r.total).collect();
    if totals.len() >= 2 {
        line_chart_png(&totals, &out.join(format!("{name}.png")))?;
    }
    Ok(())
}

fn training_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, "training"),
        ..cfg.train.clone()
    }
}

pub fn gen_synthetic(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    let s = &cfg.synthetic;
    let kind = s.kind()?;
    let grid = match kind {
        cdtvd_core::volume::SyntheticKind::AbcFlow(_) => cdtvd_core::volume::AbcFlowParams::periodic_grid(s.size)?,
        _ => GridSpec::unit([s.size; 3])?,
    };
    let steps: Vec<i64> = (0..s.frames as i64).collect();
    let series = make_synthetic(&kind, &grid, &steps, derive_seed(cfg.seed, "data"))?;
    save_raw(&series, out)?;
    println!("wrote {} {} frames at {}^3", series.len(), kind.name(), s.size);
    Ok(Vec::new())
}

fn single_input(cfg: &RunConfig) -> CliResult<&Path> {
    match cfg.input.as_slice() {
        [one] => required(&Some(one.clone()), "input").map(|_| one.as_path()),
        [] => Err(CliError::Config("missing required `input` (flag --input or config key)".into())),
        _ => Err(CliError::Config("this command takes exactly one input".into())),
    }
}

pub fn downsample(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    let input = single_input(cfg)?;
    let hr = load(input)?;
    let lr = hr.map_frames(|f| trilinear_downsample(f, cfg.factor))?;
    save_raw(&lr, out)?;
    println!("downsampled {} frames from {:?} to {:?}", lr.len(), hr.grid().dims, lr.grid().dims);
    Ok(vec![input.to_path_buf()])
}

pub fn select(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    let input = single_input(cfg)?;
    let series = load(input)?;
    let table = entropy_table(&series, &cfg.entropy)?;
    let index = select_keyframe(&series, &cfg.entropy)?;
    println!("{:>6} {:>9} {:>12}", "index", "timestep", "entropy");
    for (i, (t, h)) in series.timesteps().iter().zip(&table).enumerate() {
        println!("{i:>6} {t:>9} {h:>12.6}");
    }
    let t = series.timesteps()[index];
    println!("keyframe index {index} (timestep {t})");
    let json = serde_json::json!({ "index": index, "timestep": t, "entropies": table });
    let path = out.join("keyframe.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json).expect("plain json"))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(vec![input.to_path_buf()])
}

pub fn run_pretrain(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    if cfg.input.is_empty() {
        return Err(CliError::Config("pretrain needs at least one `input` series".into()));
    }
    let mut data = Vec::new();
    for p in &cfg.input {
        data.push(load(required(&Some(p.clone()), "input")?)?);
    }
    let (ckpt, log) = pretrain(&data, &training_config(cfg))?;
    save_checkpoint(&ckpt, &out.join(CHECKPOINT_FILE))?;
    write_log(&log, out, "pretrain_log")?;
    println!("pretrained for {} iterations", log.records.len());
    Ok(cfg.input.clone())
}

pub fn run_finetune(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    let ckpt_path = required(&cfg.checkpoint, "checkpoint")?;
    let hr_path = required(&cfg.hr, "hr")?;
    let lr_path = required(&cfg.lr, "lr")?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let hr = load(hr_path)?;
    let lr = load(lr_path)?;
    let key_t = match cfg.keyframe {
        Some(t) => t,
        None => lr.timesteps()[select_keyframe(&lr, &cfg.entropy)?],
    };
    let frame = hr
        .frame_at(key_t)
        .ok_or_else(|| CliError::Data(format!("HR series has no frame at timestep {key_t}")))?;
    let (tuned, log) = finetune(&ckpt, frame, key_t, &lr, &training_config(cfg))?;
    save_checkpoint(&tuned, &out.join(CHECKPOINT_FILE))?;
    write_log(&log, out, "finetune_log")?;
    println!("fine-tuned on timestep {key_t} for {} iterations", log.records.len());
    Ok(vec![ckpt_path.into(), hr_path.into(), lr_path.into()])
}

pub fn run_superresolve(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    let ckpt_path = required(&cfg.checkpoint, "checkpoint")?;
    let input = single_input(cfg)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let lr = load(input)?;
    let sr = superresolve(&ckpt, &lr, &cfg.sampler, derive_seed(cfg.seed, "sampling"))?;
    save_raw(&sr, out)?;
    println!("super-resolved {} frames to {:?}", sr.len(), sr.grid().dims);
    Ok(vec![ckpt_path.into(), input.into()])
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    let truth_path = required(&cfg.truth, "truth")?;
    let recon_path = required(&cfg.recon, "recon")?;
    let truth = load(truth_path)?;
    let recon = load(recon_path)?;
    let mut eval = cfg.eval.clone();
    eval.render.seed = derive_seed(cfg.seed, "rendering");
    eval.trace.seed = derive_seed(cfg.seed, "tracing");
    let report = evaluate_series(&truth, &recon, &eval)?;
    report.write_csv(&out.join("metrics.csv"))?;
    if report.frames.len() >= 2 {
        report.write_plots(out)?;
    }
    print!("{}", report.to_csv());
    Ok(vec![truth_path.into(), recon_path.into()])
}

pub fn grid_beta(cfg: &RunConfig, out: &Path) -> CliResult<Inputs> {
    let exp = ExperimentConfig {
        seed: cfg.seed,
        ..cfg.experiment.clone()
    };
    let scores = grid_search_beta(&exp, &cfg.betas)?;
    let mut csv = String::from("beta,mean_psnr_db,mean_perceptual\n");
    for s in &scores {
        csv.push_str(&format!("{},{:.6},{:.6}\n", s.beta, s.mean_psnr_db, s.mean_perceptual));
    }
    let path = out.join("beta_grid.csv");
    std::fs::write(&path, &csv).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    print!("{csv}");
    if let Some(b) = best_beta(&scores) {
        println!("best beta {} ({:.3} dB)", b.beta, b.mean_psnr_db);
    }
    Ok(Vec::new())
}
