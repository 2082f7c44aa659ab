//! Two-stage alternating pretraining, single-keyframe fine-tuning,
//! checkpointing and super-resolution inference.

mod checkpoint;
mod experiment;
mod infer;
pub(crate) mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use experiment::{
    best_beta, desk_train_config, evaluate_held_out, grid_search_beta, merge_json, run_experiment, target_series, BetaScore, ExperimentConfig,
    ExperimentOutcome, PretrainDataSpec, TABLE_BETAS,
};
pub use infer::superresolve;
pub use train::{finetune, initial_checkpoint, pretrain};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::AdamConfig;
use crate::denoiser::SwinUNetConfig;
use crate::diffusion::{Parameterization, SamplerConfig, ScheduleConfig};
use crate::encoder::{ContrastiveLossConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::volume::TimeSeries;

/// What the diffusion process generates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionTarget {
    /// The HR volume itself, in model space.
    Image,
    /// The HR volume minus its trilinear condition, times the residual scale.
    Residual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Drop the feature-space regularizer from the denoiser objective and
    /// skip encoder training.
    pub no_contrastive: bool,
    /// Denoiser blocks keep only their convolutional branch.
    pub no_local_attention: bool,
    /// Fine-tune from randomly initialized weights.
    pub no_pretrain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train: 0.8, test: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub beta_contrastive: f64,
    /// Weight of the reconstruction objective next to the noise loss.
    pub lambda_obj: f64,
    pub scale_factor: usize,
    /// Iterations spent in each pretraining stage before switching.
    pub stage_alternation: usize,
    pub pretrain_iterations: usize,
    pub finetune_iterations: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Random flips, axis permutations and intensity scaling of training
    /// pairs.
    pub augment: bool,
    pub split: SplitConfig,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub target: DiffusionTarget,
    pub prediction: Parameterization,
    /// Multiplier on the residual target; `None` fits the scale that gives
    /// the training residual unit RMS.
    pub residual_scale: Option<f64>,
    /// Normalization ranges are widened by this fraction on each side.
    pub normalization_margin: f64,
    pub encoder: EncoderConfig,
    pub denoiser: SwinUNetConfig,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            beta_contrastive: 0.1,
            lambda_obj: 0.1,
            scale_factor: 4,
            stage_alternation: 100,
            pretrain_iterations: 1000,
            finetune_iterations: 500,
            batch_size: 2,
            grad_clip: 1.0,
            augment: true,
            split: SplitConfig::default(),
            seed: 0,
            ablation: AblationFlags::default(),
            target: DiffusionTarget::Residual,
            prediction: Parameterization::Velocity,
            residual_scale: None,
            normalization_margin: 0.1,
            encoder: EncoderConfig::default(),
            denoiser: SwinUNetConfig::default(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if (self.split.train + self.split.test - 1.0).abs() > 1e-9 || self.split.train < 0.0 || self.split.test < 0.0 {
            return bad("split fractions must be non-negative and sum to 1".into());
        }
        if self.scale_factor < 2 {
            return Err(Error::InvalidFactor(self.scale_factor));
        }
        if self.stage_alternation == 0 || self.batch_size == 0 {
            return bad("stage_alternation and batch_size must be positive".into());
        }
        if !(self.grad_clip > 0.0) || !(self.lambda_obj >= 0.0) || self.residual_scale.is_some_and(|s| !(s > 0.0)) {
            return bad("grad_clip and residual_scale must be positive, lambda_obj non-negative".into());
        }
        if !(0.0..1.0).contains(&self.normalization_margin) {
            return bad("normalization_margin must be in [0, 1)".into());
        }
        self.contrastive().validate()?;
        self.encoder.validate()?;
        self.denoiser_config().validate()?;
        let sched = self.schedule.build()?;
        self.sampler.validate(&sched)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn contrastive(&self) -> ContrastiveLossConfig {
        ContrastiveLossConfig {
            beta: self.beta_contrastive,
            ..ContrastiveLossConfig::default()
        }
    }

    /// Denoiser configuration with the attention ablation applied.
    pub fn denoiser_config(&self) -> SwinUNetConfig {
        SwinUNetConfig {
            attention_off: self.denoiser.attention_off || self.ablation.no_local_attention,
            ..self.denoiser.clone()
        }
    }
}

/// Training phase recorded in a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Freshly initialized weights.
    Initialized,
    Pretrained,
    Finetuned,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Initialized => "initialized",
            Phase::Pretrained => "pretrained",
            Phase::Finetuned => "finetuned",
        }
    }
}

/// Which component an iteration updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Encoder update, denoiser frozen.
    A,
    /// Denoiser update, encoder frozen.
    B,
    /// Fine-tuning update of the denoiser.
    F,
}

/// Per-iteration losses. Components not computed in a stage are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub total: f64,
    pub denoise: f64,
    pub reconstruction: f64,
    pub regularizer: f64,
    pub cld: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,stage,total,denoise,reconstruction,regularizer,cld\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:?},{:.8},{:.8},{:.8},{:.8},{:.8}",
                r.iteration, r.stage, r.total, r.denoise, r.reconstruction, r.regularizer, r.cld
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Independent sub-seed for the stream named `tag`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A single frame addressed by series and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FrameRef {
    pub series: usize,
    pub position: usize,
}

/// Seeded random split of every frame of `series` into disjoint train and
/// test sets. The train share is rounded to the nearest frame.
pub fn split_dataset(series: &[TimeSeries], cfg: &TrainConfig) -> Result<(Vec<FrameRef>, Vec<FrameRef>)> {
    let mut all: Vec<FrameRef> = series
        .iter()
        .enumerate()
        .flat_map(|(s, ts)| (0..ts.len()).map(move |p| FrameRef { series: s, position: p }))
        .collect();
    if all.len() < 2 {
        return Err(Error::TooFewFrames(all.len()));
    }
    let n = all.len();
    let n_train = ((n as f64 * cfg.split.train).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    all.shuffle(&mut rng);
    let test = all.split_off(n_train);
    let mut train = all;
    train.sort();
    let mut test = test;
    test.sort();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{GridSpec, ScalarVolume, Volume};

    fn series(n: usize) -> TimeSeries {
        let g = GridSpec::unit([2, 2, 2]).unwrap();
        let frames = (0..n)
            .map(|i| Volume::Scalar(ScalarVolume::constant(g.clone(), i as f32).unwrap()))
            .collect();
        TimeSeries::new(frames, (0..n as i64).collect()).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let cfg = TrainConfig::default();
        let (tr, te) = split_dataset(&[series(10)], &cfg).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert!(tr.iter().all(|f| !te.contains(f)));
        assert_eq!(split_dataset(&[series(10)], &cfg).unwrap(), (tr, te));
        let (tr, te) = split_dataset(&[series(200), series(250)], &cfg).unwrap();
        assert_eq!((tr.len(), te.len()), (360, 90));
        assert!(matches!(split_dataset(&[series(1)], &cfg), Err(Error::TooFewFrames(1))));
        let other = TrainConfig { seed: 5, ..cfg };
        assert_ne!(split_dataset(&[series(10)], &other).unwrap().0, split_dataset(&[series(10)], &TrainConfig::default()).unwrap().0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { split: SplitConfig { train: 0.7, test: 0.2 }, ..Default::default() };
        assert!(bad.validate().is_err());
        let json = r#"{"learning_rate": 0.001, "bogus": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
        let json = r#"{"learning_rate": 0.001, "ablation": {"no_pretrain": true}}"#;
        let cfg: TrainConfig = serde_json::from_str(json).unwrap();
        assert!(cfg.ablation.no_pretrain && cfg.learning_rate == 0.001);
    }
}
