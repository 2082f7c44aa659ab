//! Runs the desk-scale experiment from an optional JSON config and prints
//! model and baseline metrics.

use std::time::Instant;

use cdtvd_core::trainer::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg: ExperimentConfig = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    let start = Instant::now();
    let out = run_experiment(&cfg)?;
    let last = |log: &cdtvd_core::trainer::TrainLog| log.records.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!("keyframe timestep {}", out.keyframe_timestep);
    println!("pretrain final loss {:.5}, finetune final loss {:.5}", last(&out.pretrain_log), last(&out.finetune_log));
    println!("model\n{}", out.model.to_csv());
    println!("trilinear\n{}", out.baseline.to_csv());
    println!("psnr gain {:.3} dB, elapsed {:.1} s", out.psnr_gain_db(), start.elapsed().as_secs_f64());
    Ok(())
}
