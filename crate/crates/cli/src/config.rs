//! JSON run configuration shared by every subcommand. Command-line flags
//! override the matching keys.

use std::path::{Path, PathBuf};

use cdtvd_core::diffusion::SamplerConfig;
use cdtvd_core::keyframe::EntropyConfig;
use cdtvd_core::metrics::EvalConfig;
use cdtvd_core::trainer::{ExperimentConfig, TrainConfig, TABLE_BETAS};
use cdtvd_core::volume::{AbcFlowParams, GaussianBlobParams, SyntheticKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    /// `abc_flow` or `gaussian_blobs`.
    pub kind: String,
    pub size: usize,
    pub frames: usize,
    pub abc_flow: AbcFlowParams,
    pub gaussian_blobs: GaussianBlobParams,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            kind: "abc_flow".into(),
            size: 32,
            frames: 12,
            abc_flow: AbcFlowParams::default(),
            gaussian_blobs: GaussianBlobParams::default(),
        }
    }
}

impl SyntheticSection {
    pub fn kind(&self) -> CliResult<SyntheticKind> {
        match self.kind.as_str() {
            "abc_flow" => Ok(SyntheticKind::AbcFlow(self.abc_flow.clone())),
            "gaussian_blobs" => Ok(SyntheticKind::GaussianBlobs(self.gaussian_blobs.clone())),
            other => Err(CliError::Config(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Input series directories.
    pub input: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub hr: Option<PathBuf>,
    pub lr: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub recon: Option<PathBuf>,
    /// Fine-tuning timestep; selected by entropy when absent.
    pub keyframe: Option<i64>,
    pub factor: usize,
    pub synthetic: SyntheticSection,
    pub entropy: EntropyConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentConfig,
    pub betas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            input: Vec::new(),
            checkpoint: None,
            hr: None,
            lr: None,
            truth: None,
            recon: None,
            keyframe: None,
            factor: 4,
            synthetic: SyntheticSection::default(),
            entropy: EntropyConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
            experiment: ExperimentConfig::default(),
            betas: TABLE_BETAS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The configuration with the output location cleared, so runs that
    /// differ only in where they write are identical.
    pub fn identity(&self) -> RunConfig {
        RunConfig {
            out: None,
            ..self.clone()
        }
    }

    /// SHA-256 of [`RunConfig::identity`], hex encoded.
    pub fn hash(&self) -> CliResult<String> {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(&self.identity()).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Returns the path or a config error naming the missing key.
pub fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    let p = value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("missing required `{key}` (flag --{key} or config key)")))?;
    if !p.exists() {
        return Err(CliError::Data(format!("{key} path {} does not exist", p.display())));
    }
    Ok(p)
}
