use serde::{Deserialize, Serialize};

use super::{derive_seed, finetune, initial_checkpoint, pretrain, superresolve, Checkpoint, TrainConfig, TrainLog};
use crate::denoiser::SwinUNetConfig;
use crate::error::{Error, Result};
use crate::keyframe::{select_keyframe, EntropyConfig};
use crate::metrics::{evaluate_series, EvalConfig, EvalReport};
use crate::volume::{
    make_synthetic, trilinear_downsample, trilinear_upsample, AbcFlowParams, GaussianBlobParams, GridSpec,
    SyntheticKind, TimeSeries,
};

/// Candidate contrastive weights of the hyper-parameter sweep.
pub const TABLE_BETAS: [f64; 6] = [0.01, 0.1, 0.25, 0.5, 1.0, 5.0];

/// Synthetic pretraining corpus: one blob series per parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainDataSpec {
    pub parameterizations: Vec<GaussianBlobParams>,
    pub frames_per_series: usize,
    pub hr_size: usize,
}

impl Default for PretrainDataSpec {
    fn default() -> Self {
        PretrainDataSpec {
            parameterizations: vec![
                GaussianBlobParams::default(),
                GaussianBlobParams {
                    count: 12,
                    sigma_range: [0.05, 0.12],
                    amplitude_range: [0.3, 1.0],
                    speed: 0.015,
                },
                GaussianBlobParams {
                    count: 3,
                    sigma_range: [0.15, 0.3],
                    amplitude_range: [-1.0, 1.0],
                    speed: 0.02,
                },
            ],
            frames_per_series: 40,
            hr_size: 32,
        }
    }
}

impl PretrainDataSpec {
    pub fn generate(&self, seed: u64) -> Result<Vec<TimeSeries>> {
        if self.parameterizations.is_empty() || self.frames_per_series == 0 {
            return Err(Error::Config("pretraining corpus is empty".into()));
        }
        let grid = GridSpec::unit([self.hr_size; 3])?;
        let steps: Vec<i64> = (0..self.frames_per_series as i64).collect();
        self.parameterizations
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = derive_seed(seed, &format!("blobs-{i}"));
                make_synthetic(&SyntheticKind::GaussianBlobs(p.clone()), &grid, &steps, s)
            })
            .collect()
    }
}

/// Pretrain on blobs, fine-tune on the keyframe of a held-out ABC flow,
/// super-resolve and compare against trilinear upsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Keys given here override [`desk_train_config`], not the plain
    /// training defaults.
    #[serde(deserialize_with = "desk_overrides")]
    pub train: TrainConfig,
    pub pretrain_data: PretrainDataSpec,
    pub target_flow: AbcFlowParams,
    pub target_frames: usize,
    pub target_size: usize,
    pub entropy: EntropyConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

/// Training budget sized for a single CPU core: a narrower denoiser, a
/// higher learning rate and a few hundred iterations per phase.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        pretrain_iterations: 200,
        finetune_iterations: 300,
        stage_alternation: 50,
        denoiser: SwinUNetConfig {
            embed_dim: 16,
            timestep_embed_dim: 16,
            ..SwinUNetConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key, any
/// other value replaces.
pub fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn desk_overrides<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    use serde::de::Error as _;
    let patch = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(desk_train_config()).map_err(D::Error::custom)?;
    merge_json(&mut base, patch);
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: desk_train_config(),
            pretrain_data: PretrainDataSpec::default(),
            target_flow: AbcFlowParams::default(),
            target_frames: 12,
            target_size: 32,
            entropy: EntropyConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub keyframe_timestep: i64,
    /// Metrics on every frame except the keyframe.
    pub model: EvalReport,
    pub baseline: EvalReport,
    pub pretrained: Checkpoint,
    pub finetuned: Checkpoint,
    pub pretrain_log: TrainLog,
    pub finetune_log: TrainLog,
    pub truth: TimeSeries,
    pub lr: TimeSeries,
}

impl ExperimentOutcome {
    pub fn psnr_gain_db(&self) -> f64 {
        self.model.mean_psnr_db - self.baseline.mean_psnr_db
    }
}

/// HR ground truth and LR input of the held-out flow.
pub fn target_series(cfg: &ExperimentConfig) -> Result<(TimeSeries, TimeSeries)> {
    if cfg.target_frames < 2 {
        return Err(Error::TooFewFrames(cfg.target_frames));
    }
    let grid = AbcFlowParams::periodic_grid(cfg.target_size)?;
    let steps: Vec<i64> = (0..cfg.target_frames as i64).collect();
    let hr = make_synthetic(&SyntheticKind::AbcFlow(cfg.target_flow.clone()), &grid, &steps, 0)?;
    let lr = hr.map_frames(|f| trilinear_downsample(f, cfg.train.scale_factor))?;
    Ok((hr, lr))
}

/// Evaluates the model and trilinear baseline on the non-keyframe frames.
pub fn evaluate_held_out(
    truth: &TimeSeries,
    recon: &TimeSeries,
    lr: &TimeSeries,
    keyframe: usize,
    factor: usize,
    eval: &EvalConfig,
) -> Result<(EvalReport, EvalReport)> {
    let held: Vec<usize> = (0..truth.len()).filter(|&i| i != keyframe).collect();
    let truth = truth.select(&held)?;
    let recon = recon.select(&held)?;
    let ti = lr.select(&held)?.map_frames(|f| trilinear_upsample(f, factor))?;
    Ok((evaluate_series(&truth, &recon, eval)?, evaluate_series(&truth, &ti, eval)?))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let train = TrainConfig {
        seed: derive_seed(cfg.seed, "training"),
        ..cfg.train.clone()
    };
    train.validate()?;
    let (truth, lr) = target_series(cfg)?;
    let keyframe = select_keyframe(&lr, &cfg.entropy)?;
    let key_t = lr.timesteps()[keyframe];

    let (pretrained, pretrain_log) = if train.ablation.no_pretrain {
        (initial_checkpoint(&train)?, TrainLog::default())
    } else {
        let corpus = cfg.pretrain_data.generate(derive_seed(cfg.seed, "data"))?;
        pretrain(&corpus, &train)?
    };
    let (finetuned, finetune_log) = finetune(&pretrained, &truth.frames()[keyframe], key_t, &lr, &train)?;
    let recon = superresolve(&finetuned, &lr, &train.sampler, derive_seed(cfg.seed, "sampling"))?;
    let (model, baseline) = evaluate_held_out(&truth, &recon, &lr, keyframe, train.scale_factor, &cfg.eval)?;
    Ok(ExperimentOutcome {
        keyframe_timestep: key_t,
        model,
        baseline,
        pretrained,
        finetuned,
        pretrain_log,
        finetune_log,
        truth,
        lr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaScore {
    pub beta: f64,
    pub mean_psnr_db: f64,
    pub mean_perceptual: f64,
}

/// Runs the experiment once per contrastive weight and scores each.
pub fn grid_search_beta(cfg: &ExperimentConfig, betas: &[f64]) -> Result<Vec<BetaScore>> {
    if betas.is_empty() {
        return Err(Error::Config("no beta values to search".into()));
    }
    betas
        .iter()
        .map(|&beta| {
            let run = ExperimentConfig {
                train: TrainConfig {
                    beta_contrastive: beta,
                    ..cfg.train.clone()
                },
                ..cfg.clone()
            };
            let out = run_experiment(&run)?;
            Ok(BetaScore {
                beta,
                mean_psnr_db: out.model.mean_psnr_db,
                mean_perceptual: out.model.mean_perceptual,
            })
        })
        .collect()
}

/// Index of the best score by PSNR; the first wins ties.
pub fn best_beta(scores: &[BetaScore]) -> Option<&BetaScore> {
    scores
        .iter()
        .fold(None, |best: Option<&BetaScore>, s| match best {
            Some(b) if b.mean_psnr_db >= s.mean_psnr_db => Some(b),
            _ => Some(s),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::train::tests::toy_config;

    fn tiny() -> ExperimentConfig {
        let mut train = toy_config();
        train.pretrain_iterations = 2;
        train.finetune_iterations = 2;
        train.sampler.inference_steps = 2;
        ExperimentConfig {
            train,
            pretrain_data: PretrainDataSpec {
                frames_per_series: 3,
                hr_size: 16,
                ..Default::default()
            },
            target_frames: 3,
            target_size: 16,
            eval: EvalConfig {
                render: crate::metrics::RenderConfig {
                    width: 8,
                    height: 8,
                    num_views: 2,
                    seed: 0,
                },
                trace: crate::metrics::TraceConfig {
                    num_seeds: 10,
                    max_steps: 20,
                    ..Default::default()
                },
            },
            ..Default::default()
        }
    }

    #[test]
    fn pipeline_runs_and_excludes_keyframe() {
        let cfg = tiny();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.model.frames.len(), 2);
        assert!(out.model.frames.iter().all(|f| f.timestep != out.keyframe_timestep));
        assert!(out.model.mean_chamfer.is_some());
        assert_eq!(out.baseline.frames.len(), 2);
        let again = run_experiment(&cfg).unwrap();
        assert_eq!(out.model.to_csv(), again.model.to_csv());
    }

    #[test]
    fn train_overrides_layer_on_desk_budget() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 4, "train": {"ablation": {"no_pretrain": true}, "denoiser": {"stages": 2}}}"#)
                .unwrap();
        let desk = desk_train_config();
        assert_eq!(cfg.seed, 4);
        assert!(cfg.train.ablation.no_pretrain);
        assert_eq!(cfg.train.learning_rate, desk.learning_rate);
        assert_eq!(cfg.train.denoiser.stages, 2);
        assert_eq!(cfg.train.denoiser.embed_dim, desk.denoiser.embed_dim);
        assert_eq!(serde_json::from_str::<ExperimentConfig>("{}").unwrap(), ExperimentConfig::default());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"train": {"bogus": 1}}"#).is_err());
    }

    #[test]
    fn best_beta_prefers_first_on_ties() {
        let s = |beta, p| BetaScore { beta, mean_psnr_db: p, mean_perceptual: 0.0 };
        let scores = [s(0.01, 30.0), s(0.1, 31.0), s(0.25, 31.0)];
        assert_eq!(best_beta(&scores).unwrap().beta, 0.1);
        assert!(best_beta(&[]).is_none());
    }
}
