//! Degradation-aware convolutional encoder with a scalar energy head.
//!
//! The encoder maps a single-channel volume to a stack of feature maps, one
//! per resolution level. Level 0 is the full-resolution stem; level `k` sits
//! after `k` factor-2 downsamplings. The energy head pools the deepest level
//! and applies one affine map.

mod loss;

use serde::{Deserialize, Serialize};

use crate::autograd::{Bound, Graph, Initializer, ParamSet, Real, Tensor, Var};
use crate::nn::{column_means, voxel_count, Conv3, Linear, Resize2};
use crate::volume::ScalarVolume;
use crate::{Error, Result};

pub use loss::{
    cld_loss, cld_loss_with_grad, combined_objective, contrastive_regularizer, regularizer_on_tape,
    AnchorTriple, ContrastiveLossConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub base_channels: usize,
    pub num_downsamples: usize,
    /// Levels exposed as the latent space, each in `0..=num_downsamples`.
    pub feature_levels: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            base_channels: 8,
            num_downsamples: 3,
            feature_levels: vec![1, 2, 3],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("encoder base_channels must be positive".into()));
        }
        if self.num_downsamples == 0 {
            return Err(Error::Config("encoder needs at least one downsample".into()));
        }
        if self.feature_levels.is_empty() {
            return Err(Error::Config("encoder feature_levels is empty".into()));
        }
        if let Some(&l) = self.feature_levels.iter().find(|&&l| l > self.num_downsamples) {
            return Err(Error::Config(format!(
                "feature level {l} exceeds encoder depth {}",
                self.num_downsamples
            )));
        }
        Ok(())
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial divisor the input dims must be a multiple of.
    pub fn stride(&self) -> usize {
        1 << self.num_downsamples
    }
}

/// One exposed feature level, channels-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub dims: [usize; 3],
    pub channels: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeatures {
    pub levels: Vec<FeatureMap>,
    /// Channel means of the deepest level, the input of the energy head.
    pub pooled: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct DownStage {
    merge: Linear,
    conv: Conv3,
}

/// Tape handles produced by [`ContrastiveEncoder::forward`].
#[derive(Debug, Clone)]
pub struct EncoderTape {
    /// Every level `0..=num_downsamples`.
    pub levels: Vec<Var>,
    pub dims: Vec<[usize; 3]>,
}

#[derive(Debug, Clone)]
pub struct ContrastiveEncoder {
    config: EncoderConfig,
    params: ParamSet<f32>,
    stem: Conv3,
    downs: Vec<DownStage>,
    head: Linear,
}

impl ContrastiveEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let mut init = Initializer::new(seed);
        let stem = Conv3::new(&mut p, &mut init, "enc.stem", 1, config.channels_at(0));
        let downs = (0..config.num_downsamples)
            .map(|k| {
                let (cin, cout) = (config.channels_at(k), config.channels_at(k + 1));
                DownStage {
                    merge: Linear::new(&mut p, &mut init, &format!("enc.down{k}.merge"), 8 * cin, cout),
                    conv: Conv3::new(&mut p, &mut init, &format!("enc.down{k}.conv"), cout, cout),
                }
            })
            .collect();
        let deepest = config.channels_at(config.num_downsamples);
        let head = Linear::new(&mut p, &mut init, "enc.energy", deepest, 1);
        Ok(ContrastiveEncoder {
            config,
            params: p,
            stem,
            downs,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    /// Replaces all weights; names and shapes must match.
    pub fn set_params(&mut self, params: ParamSet<f32>) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn expected_num_params(&self) -> usize {
        self.stem.num_params()
            + self
                .downs
                .iter()
                .map(|d| d.merge.num_params() + d.conv.num_params())
                .sum::<usize>()
            + self.head.num_params()
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let s = self.config.stride();
        if dims.iter().any(|&d| d % s != 0 || d < s) {
            return Err(Error::NonDivisibleDims { dims, divisor: s });
        }
        Ok(())
    }

    /// Builds the encoder on `g`. `x` is `voxels x 1` on `dims`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, dims: [usize; 3]) -> Result<EncoderTape> {
        self.check_dims(dims)?;
        let h = self.stem.forward(g, p, x, dims);
        let mut h = g.gelu(h);
        let mut levels = vec![h];
        let mut all_dims = vec![dims];
        let mut cur = dims;
        for (k, d) in self.downs.iter().enumerate() {
            let r = Resize2::new(cur, self.config.channels_at(k))?;
            let s = r.space_to_depth(g, h);
            let m = d.merge.forward(g, p, s);
            let m = g.gelu(m);
            let c = d.conv.forward(g, p, m, r.coarse);
            h = g.gelu(c);
            cur = r.coarse;
            levels.push(h);
            all_dims.push(cur);
        }
        Ok(EncoderTape {
            levels,
            dims: all_dims,
        })
    }

    /// The exposed levels of a tape, in `feature_levels` order.
    pub fn feature_vars(&self, tape: &EncoderTape) -> Vec<Var> {
        self.config.feature_levels.iter().map(|&l| tape.levels[l]).collect()
    }

    /// `1 x 1` energy node.
    pub fn energy_var<T: Real>(&self, g: &mut Graph<T>, p: &Bound, tape: &EncoderTape) -> Var {
        let deepest = *tape.levels.last().expect("encoder has levels");
        let pooled = g.mean_rows(deepest);
        self.head.forward(g, p, pooled)
    }

    pub fn encode(&self, vol: &ScalarVolume) -> Result<LatentFeatures> {
        let dims = vol.dims();
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::new(voxel_count(dims), 1, vol.values().to_vec()));
        let tape = self.forward(&mut g, &p, x, dims)?;
        let levels = self
            .config
            .feature_levels
            .iter()
            .map(|&l| {
                let t = g.value(tape.levels[l]);
                FeatureMap {
                    dims: tape.dims[l],
                    channels: t.cols,
                    data: t.data.clone(),
                }
            })
            .collect();
        let pooled = column_means(g.value(*tape.levels.last().expect("encoder has levels")));
        Ok(LatentFeatures { levels, pooled })
    }

    /// Energy head applied to pooled features.
    pub fn energy(&self, features: &LatentFeatures) -> f64 {
        let w = &self.params.get(self.head.w).data;
        let b = self.params.get(self.head.b).data[0] as f64;
        features
            .pooled
            .iter()
            .zip(w)
            .map(|(&f, &w)| f as f64 * w as f64)
            .sum::<f64>()
            + b
    }

    pub fn energy_of(&self, vol: &ScalarVolume) -> Result<f64> {
        Ok(self.energy(&self.encode(vol)?))
    }
}

pub(crate) fn check_same_layout(a: &ParamSet<f32>, b: &ParamSet<f32>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeIncompatible(format!(
            "expected {} parameter tensors, found {}",
            a.len(),
            b.len()
        )));
    }
    for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
        if na != nb || ta.rows != tb.rows || ta.cols != tb.cols {
            return Err(Error::ShapeIncompatible(format!(
                "parameter {na} ({}x{}) does not match {nb} ({}x{})",
                ta.rows, ta.cols, tb.rows, tb.cols
            )));
        }
    }
    Ok(())
}
