//! Hierarchical windowed-attention UNet that predicts diffusion noise from
//! the noisy state and the upsampled LR condition.
//!
//! Layout: patch embedding, `stages` encoder stages separated by patch
//! merging, a mirrored decoder that upsamples with transposed convolutions
//! and fuses same-stage skips, and a head that returns to voxel resolution
//! and mixes in the raw input through a final 3x3x3 convolution.

mod blocks;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Bound, Graph, Initializer, ParamSet, Real, Tensor, Var};
use crate::diffusion::NoisePredictor;
use crate::encoder::check_same_layout;
use crate::nn::{block_partition_index, invert_index, voxel_count, Conv3, LayerNorm, Linear, Resize2};
use crate::volume::ScalarVolume;
use crate::{Error, Result};

pub use blocks::{
    effective_window, patch_partition, patch_unpartition, sinusoidal_embedding, AttentionPath, LocalAttentionBlock,
    WindowMsa, WindowPartition,
};

/// Channels of the noisy state and the condition.
pub const INPUT_CHANNELS: usize = 2;
/// Per-voxel features produced by the head before the final convolution.
pub const HEAD_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwinUNetConfig {
    pub stages: usize,
    pub window_size: [usize; 3],
    pub heads_per_stage: Vec<usize>,
    pub embed_dim: usize,
    pub patch_size: [usize; 3],
    pub mlp_ratio: f64,
    pub timestep_embed_dim: usize,
    /// Replace every block by its convolutional branch.
    pub attention_off: bool,
}

impl Default for SwinUNetConfig {
    fn default() -> Self {
        SwinUNetConfig {
            stages: 3,
            window_size: [4, 4, 4],
            heads_per_stage: vec![2, 4, 4],
            embed_dim: 32,
            patch_size: [2, 2, 2],
            mlp_ratio: 4.0,
            timestep_embed_dim: 32,
            attention_off: false,
        }
    }
}

impl SwinUNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages == 0 {
            return bad("stages must be at least 1".into());
        }
        if self.heads_per_stage.len() != self.stages {
            return bad(format!(
                "{} head counts for {} stages",
                self.heads_per_stage.len(),
                self.stages
            ));
        }
        for s in 0..self.stages {
            let (c, h) = (self.channels_at(s), self.heads_per_stage[s]);
            if h == 0 || c % h != 0 {
                return bad(format!("stage {s}: {c} channels not divisible by {h} heads"));
            }
        }
        if self.embed_dim == 0 || self.timestep_embed_dim < 2 || self.timestep_embed_dim % 2 != 0 {
            return bad("embed_dim must be positive and timestep_embed_dim even".into());
        }
        if self.window_size.contains(&0) || self.patch_size.contains(&0) {
            return bad("window and patch sizes must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn channels_at(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn mlp_hidden(&self, stage: usize) -> usize {
        ((self.channels_at(stage) as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    /// Token grid of every stage for an input of `dims` voxels.
    pub fn stage_grids(&self, dims: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        let f = 1 << (self.stages - 1);
        for a in 0..3 {
            let d = self.patch_size[a] * f;
            if dims[a] % d != 0 {
                return Err(Error::NonDivisibleDims { dims, divisor: d });
            }
        }
        let mut g = [0, 1, 2].map(|a| dims[a] / self.patch_size[a]);
        let mut out = Vec::with_capacity(self.stages);
        for _ in 0..self.stages {
            let w = effective_window(g, self.window_size);
            if (0..3).any(|a| g[a] % w[a] != 0) {
                return Err(Error::NonDivisibleDims {
                    dims: g,
                    divisor: w.into_iter().max().unwrap_or(1),
                });
            }
            out.push(g);
            g = g.map(|v| v / 2);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: Linear,
    fuse: Linear,
    block: LocalAttentionBlock,
}

#[derive(Debug, Clone)]
pub struct SwinUNet {
    config: SwinUNetConfig,
    params: ParamSet<f32>,
    patch_embed: Linear,
    time_mlp: Linear,
    encoder_blocks: Vec<LocalAttentionBlock>,
    merges: Vec<Linear>,
    decoder: Vec<DecoderStage>,
    head_norm: LayerNorm,
    head_proj: Linear,
    head_conv: Conv3,
}

impl SwinUNet {
    pub fn new(config: SwinUNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let mut init = Initializer::new(seed);
        let patch_vol = voxel_count(config.patch_size);
        let c0 = config.channels_at(0);
        let e = config.timestep_embed_dim;
        let with_att = !config.attention_off;
        let patch_embed = Linear::new(&mut p, &mut init, "patch_embed", INPUT_CHANNELS * patch_vol, c0);
        let time_mlp = Linear::new(&mut p, &mut init, "time_mlp", e, e);
        let block = |p: &mut ParamSet<f32>, init: &mut Initializer, name: &str, s: usize| {
            LocalAttentionBlock::new(
                p,
                init,
                name,
                config.channels_at(s),
                config.heads_per_stage[s],
                config.window_size,
                config.mlp_hidden(s),
                e,
                with_att,
            )
        };
        let mut encoder_blocks = Vec::new();
        let mut merges = Vec::new();
        for s in 0..config.stages {
            encoder_blocks.push(block(&mut p, &mut init, &format!("enc{s}"), s));
            if s + 1 < config.stages {
                let (c, cn) = (config.channels_at(s), config.channels_at(s + 1));
                merges.push(Linear::new(&mut p, &mut init, &format!("merge{s}"), 8 * c, cn));
            }
        }
        let mut decoder = Vec::new();
        for s in (0..config.stages - 1).rev() {
            let (c, cn) = (config.channels_at(s), config.channels_at(s + 1));
            decoder.push(DecoderStage {
                up: Linear::new(&mut p, &mut init, &format!("dec{s}.up"), cn, 8 * c),
                fuse: Linear::new(&mut p, &mut init, &format!("dec{s}.fuse"), 2 * c, c),
                block: block(&mut p, &mut init, &format!("dec{s}.block"), s),
            });
        }
        let head_norm = LayerNorm::new(&mut p, &mut init, "head.ln", c0);
        let head_proj = Linear::new(&mut p, &mut init, "head.proj", c0, patch_vol * HEAD_CHANNELS);
        let head_conv = Conv3::new(&mut p, &mut init, "head.conv", HEAD_CHANNELS + INPUT_CHANNELS, 1);
        Ok(SwinUNet {
            config,
            params: p,
            patch_embed,
            time_mlp,
            encoder_blocks,
            merges,
            decoder,
            head_norm,
            head_proj,
            head_conv,
        })
    }

    pub fn config(&self) -> &SwinUNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet<f32>) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    /// Parameter count summed over layer shapes.
    pub fn expected_num_params(&self) -> usize {
        self.patch_embed.num_params()
            + self.time_mlp.num_params()
            + self.encoder_blocks.iter().map(LocalAttentionBlock::num_params).sum::<usize>()
            + self.merges.iter().map(Linear::num_params).sum::<usize>()
            + self
                .decoder
                .iter()
                .map(|d| d.up.num_params() + d.fuse.num_params() + d.block.num_params())
                .sum::<usize>()
            + self.head_norm.num_params()
            + self.head_proj.num_params()
            + self.head_conv.num_params()
    }

    /// Builds the network on `g`. `input` is `voxels x 2` (noisy state,
    /// condition); returns the `voxels x 1` noise prediction.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, input: Var, dims: [usize; 3], t: usize) -> Result<Var> {
        let grids = self.config.stage_grids(dims)?;
        let n = voxel_count(dims);
        if g.value(input).rows != n || g.value(input).cols != INPUT_CHANNELS {
            return Err(Error::DimMismatch {
                expected: vec![n, INPUT_CHANNELS],
                actual: vec![g.value(input).rows, g.value(input).cols],
            });
        }
        let patch = self.config.patch_size;
        let patch_vol = voxel_count(patch);

        let e = self.config.timestep_embed_dim;
        let sin = sinusoidal_embedding(t, e);
        let sin = g.constant(Tensor::new(1, e, sin.into_iter().map(T::of).collect()));
        let temb = self.time_mlp.forward(g, p, sin);
        let temb = g.gelu(temb);

        let (pidx, _) = block_partition_index(dims, INPUT_CHANNELS, patch)?;
        let tokens = g.gather(input, Arc::new(pidx), voxel_count(grids[0]), INPUT_CHANNELS * patch_vol);
        let mut h = self.patch_embed.forward(g, p, tokens);

        let mut skips = Vec::with_capacity(self.config.stages);
        for s in 0..self.config.stages {
            h = self.encoder_blocks[s].forward(g, p, h, temb, grids[s])?;
            if s + 1 < self.config.stages {
                skips.push(h);
                let r = Resize2::new(grids[s], self.config.channels_at(s))?;
                let m = r.space_to_depth(g, h);
                h = self.merges[s].forward(g, p, m);
            }
        }
        for (d, s) in self.decoder.iter().zip((0..self.config.stages - 1).rev()) {
            let r = Resize2::new(grids[s], self.config.channels_at(s))?;
            let up = d.up.forward(g, p, h);
            let up = r.depth_to_space(g, up);
            let cat = g.concat_cols(up, skips[s]);
            let fused = d.fuse.forward(g, p, cat);
            h = d.block.forward(g, p, fused, temb, grids[s])?;
        }

        let y = self.head_norm.forward(g, p, h);
        let y = self.head_proj.forward(g, p, y);
        let (hidx, _) = block_partition_index(dims, HEAD_CHANNELS, patch)?;
        let y = g.gather(y, Arc::new(invert_index(&hidx)), n, HEAD_CHANNELS);
        let y = g.gelu(y);
        let cat = g.concat_cols(y, input);
        Ok(self.head_conv.forward(g, p, cat, dims))
    }

    /// Interleaves the noisy state and the condition into a `voxels x 2`
    /// tensor.
    pub fn stack_input<T: Real>(x_t: &[f32], condition: &[f32]) -> Tensor<T> {
        let data = x_t
            .iter()
            .zip(condition)
            .flat_map(|(&a, &b)| [T::of(a as f64), T::of(b as f64)])
            .collect();
        Tensor::new(x_t.len(), INPUT_CHANNELS, data)
    }

    pub fn predict(&self, x_t: &ScalarVolume, condition: &ScalarVolume, t: usize) -> Result<Vec<f32>> {
        if x_t.dims() != condition.dims() {
            return Err(Error::DimMismatch {
                expected: x_t.dims().to_vec(),
                actual: condition.dims().to_vec(),
            });
        }
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let input = g.constant(Self::stack_input(x_t.values(), condition.values()));
        let out = self.forward(&mut g, &p, input, x_t.dims(), t)?;
        Ok(g.value(out).data.clone())
    }
}

impl NoisePredictor for SwinUNet {
    fn predict_noise(&self, x_t: &ScalarVolume, condition: &ScalarVolume, t: usize) -> Result<Vec<f32>> {
        self.predict(x_t, condition, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(n: usize, rng: &mut ChaCha8Rng, scale: f32) -> ScalarVolume {
        let grid = GridSpec::unit([n, n, n]).unwrap();
        let len = grid.len();
        ScalarVolume::new(grid, (0..len).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn small() -> SwinUNetConfig {
        SwinUNetConfig {
            embed_dim: 8,
            heads_per_stage: vec![2, 2, 4],
            timestep_embed_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn stage_grids_for_32_and_16() {
        let cfg = SwinUNetConfig::default();
        assert_eq!(cfg.stage_grids([32; 3]).unwrap(), vec![[16; 3], [8; 3], [4; 3]]);
        assert_eq!(cfg.stage_grids([16; 3]).unwrap(), vec![[8; 3], [4; 3], [2; 3]]);
        assert!(matches!(cfg.stage_grids([12, 32, 32]), Err(Error::NonDivisibleDims { .. })));
    }

    #[test]
    fn output_shape_matches_input_for_16_and_32() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = SwinUNet::new(small(), 2).unwrap();
        for n in [16, 32] {
            let x = random_volume(n, &mut rng, 3.0);
            let c = random_volume(n, &mut rng, 1.0);
            let out = net.predict(&x, &c, 500).unwrap();
            assert_eq!(out.len(), n * n * n);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = SwinUNet::new(small(), 4).unwrap();
        let x = random_volume(16, &mut rng, 1.0);
        let c = random_volume(16, &mut rng, 1.0);
        assert_eq!(net.predict(&x, &c, 10).unwrap(), net.predict(&x, &c, 10).unwrap());
        assert_eq!(
            SwinUNet::new(small(), 4).unwrap().predict(&x, &c, 10).unwrap(),
            net.predict(&x, &c, 10).unwrap()
        );
    }

    /// Independent census of every weight tensor from the configuration.
    fn census(cfg: &SwinUNetConfig) -> usize {
        let lin = |i: usize, o: usize| i * o + o;
        let conv = |i: usize, o: usize| 27 * i * o + o;
        let e = cfg.timestep_embed_dim;
        let wv: usize = cfg.window_size.iter().product();
        let pv: usize = cfg.patch_size.iter().product();
        let block = |s: usize| {
            let c = cfg.embed_dim << s;
            let hid = (c as f64 * cfg.mlp_ratio).round() as usize;
            let mut n = lin(e, c) + 2 * c + conv(c, c) + lin(c, c);
            if !cfg.attention_off {
                n += 2 * c + lin(c, 3 * c) + cfg.heads_per_stage[s] * wv * wv + lin(c, c);
                n += 2 * c + lin(c, hid) + lin(hid, c);
            }
            n
        };
        let mut total = lin(2 * pv, cfg.embed_dim) + lin(e, e);
        for s in 0..cfg.stages {
            total += block(s);
            if s + 1 < cfg.stages {
                let c = cfg.embed_dim << s;
                total += lin(8 * c, 2 * c); // merge
                total += lin(2 * c, 8 * c) + lin(2 * c, c) + block(s); // decoder stage
            }
        }
        total + 2 * cfg.embed_dim + lin(cfg.embed_dim, pv * 4) + conv(4 + 2, 1)
    }

    #[test]
    fn parameter_count_matches_census() {
        for cfg in [
            SwinUNetConfig::default(),
            small(),
            SwinUNetConfig {
                attention_off: true,
                ..Default::default()
            },
        ] {
            let net = SwinUNet::new(cfg.clone(), 0).unwrap();
            assert_eq!(net.params().num_scalars(), census(&cfg));
            assert_eq!(net.expected_num_params(), census(&cfg));
        }
    }

    #[test]
    fn activations_stay_finite_for_inputs_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = SwinUNet::new(SwinUNetConfig::default(), 6).unwrap();
        let x = random_volume(32, &mut rng, 3.0);
        let c = random_volume(32, &mut rng, 3.0);
        for t in [1, 500, 1000] {
            assert!(net.predict(&x, &c, t).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn attention_off_network_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SwinUNetConfig {
            attention_off: true,
            ..small()
        };
        let net = SwinUNet::new(cfg, 8).unwrap();
        assert!(net.encoder_blocks.iter().all(|b| b.attention.is_none()));
        let x = random_volume(16, &mut rng, 1.0);
        assert_eq!(net.predict(&x, &x, 3).unwrap().len(), 4096);
    }
}
