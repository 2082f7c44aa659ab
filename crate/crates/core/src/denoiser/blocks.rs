use std::sync::Arc;

use crate::autograd::{Bound, Graph, Initializer, ParamId, ParamSet, Real, Var};
use crate::nn::{block_partition_index, invert_index, rows_to_elements, voxel_count, Conv3, LayerNorm, Linear};
use crate::{Error, Result};

/// Regroups a channels-last grid into patch tokens. Returns the token data,
/// `tokens x (channels * patch volume)`, and the token grid dims.
pub fn patch_partition(
    data: &[f32],
    dims: [usize; 3],
    channels: usize,
    patch: [usize; 3],
) -> Result<(Vec<f32>, [usize; 3])> {
    check_len(data, dims, channels)?;
    let (index, grid) = block_partition_index(dims, channels, patch)?;
    Ok((index.iter().map(|&i| data[i as usize]).collect(), grid))
}

/// Inverse of [`patch_partition`]; `dims` are the original voxel dims.
pub fn patch_unpartition(tokens: &[f32], dims: [usize; 3], channels: usize, patch: [usize; 3]) -> Result<Vec<f32>> {
    check_len(tokens, dims, channels)?;
    let (index, _) = block_partition_index(dims, channels, patch)?;
    let mut out = vec![0.0; tokens.len()];
    for (&i, &v) in index.iter().zip(tokens) {
        out[i as usize] = v;
    }
    Ok(out)
}

fn check_len(data: &[f32], dims: [usize; 3], channels: usize) -> Result<()> {
    let n = voxel_count(dims) * channels;
    if data.len() != n {
        return Err(Error::DimMismatch {
            expected: vec![n],
            actual: vec![data.len()],
        });
    }
    Ok(())
}

/// Row permutation that makes every non-overlapping window contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPartition {
    pub window: [usize; 3],
    pub window_grid: [usize; 3],
    /// `order[k]` is the token placed at position `k`.
    pub order: Vec<u32>,
}

impl WindowPartition {
    pub fn new(grid: [usize; 3], window: [usize; 3]) -> Result<Self> {
        let (order, window_grid) = block_partition_index(grid, 1, window)?;
        Ok(WindowPartition {
            window,
            window_grid,
            order,
        })
    }

    pub fn num_windows(&self) -> usize {
        voxel_count(self.window_grid)
    }

    pub fn window_volume(&self) -> usize {
        voxel_count(self.window)
    }

    /// Token rows grouped window by window.
    pub fn partition<T: Copy>(&self, tokens: &[T], channels: usize) -> Vec<T> {
        rows_to_elements(&self.order, channels)
            .iter()
            .map(|&i| tokens[i as usize])
            .collect()
    }

    pub fn reverse<T: Copy + Default>(&self, windows: &[T], channels: usize) -> Vec<T> {
        let mut out = vec![T::default(); windows.len()];
        for (k, &r) in self.order.iter().enumerate() {
            let (src, dst) = (k * channels, r as usize * channels);
            out[dst..dst + channels].copy_from_slice(&windows[src..src + channels]);
        }
        out
    }
}

/// Window used at a stage: the configured window, clamped to the grid.
pub fn effective_window(grid: [usize; 3], window: [usize; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| window[a].min(grid[a]))
}

/// Windowed multi-head self-attention with a learned additive bias shared
/// by all windows.
#[derive(Debug, Clone, Copy)]
pub struct WindowMsa {
    pub qkv: Linear,
    pub proj: Linear,
    /// `heads * Wv x Wv` over the full configured window volume `Wv`.
    pub bias: ParamId,
    pub heads: usize,
    pub window: [usize; 3],
}

impl WindowMsa {
    pub fn new(
        p: &mut ParamSet<f32>,
        init: &mut Initializer,
        name: &str,
        channels: usize,
        heads: usize,
        window: [usize; 3],
        zero_proj: bool,
    ) -> Self {
        let wv = voxel_count(window);
        let qkv = Linear::new(p, init, &format!("{name}.qkv"), channels, 3 * channels);
        let bias = p.add(format!("{name}.bias"), init.zeros(heads * wv, wv));
        let proj = if zero_proj {
            Linear::zeroed(p, init, &format!("{name}.proj"), channels, channels)
        } else {
            Linear::new(p, init, &format!("{name}.proj"), channels, channels)
        };
        WindowMsa {
            qkv,
            proj,
            bias,
            heads,
            window,
        }
    }

    pub fn num_params(&self) -> usize {
        let wv = voxel_count(self.window);
        self.qkv.num_params() + self.proj.num_params() + self.heads * wv * wv
    }

    /// Bias rows and columns for the token offsets of a clamped window.
    fn bias_index(&self, eff: [usize; 3]) -> Vec<u32> {
        let full = self.window;
        let wv = voxel_count(full);
        let offsets: Vec<usize> = (0..eff[2])
            .flat_map(|z| (0..eff[1]).flat_map(move |y| (0..eff[0]).map(move |x| x + full[0] * (y + full[1] * z))))
            .collect();
        let mut idx = Vec::with_capacity(self.heads * offsets.len() * offsets.len());
        for h in 0..self.heads {
            for &q in &offsets {
                for &k in &offsets {
                    idx.push(((h * wv + q) * wv + k) as u32);
                }
            }
        }
        idx
    }

    /// `x` is `tokens x c` on `grid`; the result is in the same order.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, grid: [usize; 3]) -> Result<Var> {
        let eff = effective_window(grid, self.window);
        let part = WindowPartition::new(grid, eff)?;
        let c = g.value(x).cols;
        let n = g.value(x).rows;
        let fwd = Arc::new(rows_to_elements(&part.order, c));
        let inv = Arc::new(invert_index(&fwd));
        let xw = g.gather(x, fwd, n, c);
        let qkv = self.qkv.forward(g, p, xw);
        let wv = part.window_volume();
        let bias = if eff == self.window {
            p[self.bias]
        } else {
            let idx = Arc::new(self.bias_index(eff));
            g.gather(p[self.bias], idx, self.heads * wv, wv)
        };
        let att = g.window_attention(qkv, bias, self.heads, wv);
        let out = self.proj.forward(g, p, att);
        Ok(g.gather(out, inv, n, c))
    }
}

/// Windowed attention plus MLP, in parallel with a convolutional residual
/// branch, conditioned on the timestep embedding.
#[derive(Debug, Clone, Copy)]
pub struct LocalAttentionBlock {
    pub channels: usize,
    pub temb: Linear,
    pub attention: Option<AttentionPath>,
    pub ln_conv: LayerNorm,
    pub conv: Conv3,
    pub conv_out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionPath {
    pub ln1: LayerNorm,
    pub msa: WindowMsa,
    pub ln2: LayerNorm,
    pub mlp1: Linear,
    pub mlp2: Linear,
}

impl LocalAttentionBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut ParamSet<f32>,
        init: &mut Initializer,
        name: &str,
        channels: usize,
        heads: usize,
        window: [usize; 3],
        mlp_hidden: usize,
        temb_dim: usize,
        with_attention: bool,
    ) -> Self {
        let temb = Linear::zeroed(p, init, &format!("{name}.temb"), temb_dim, channels);
        let attention = with_attention.then(|| AttentionPath {
            ln1: LayerNorm::new(p, init, &format!("{name}.ln1"), channels),
            msa: WindowMsa::new(p, init, &format!("{name}.msa"), channels, heads, window, true),
            ln2: LayerNorm::new(p, init, &format!("{name}.ln2"), channels),
            mlp1: Linear::new(p, init, &format!("{name}.mlp1"), channels, mlp_hidden),
            mlp2: Linear::zeroed(p, init, &format!("{name}.mlp2"), mlp_hidden, channels),
        });
        let ln_conv = LayerNorm::new(p, init, &format!("{name}.ln_conv"), channels);
        let conv = Conv3::new(p, init, &format!("{name}.conv"), channels, channels);
        let conv_out = Linear::zeroed(p, init, &format!("{name}.conv_out"), channels, channels);
        LocalAttentionBlock {
            channels,
            temb,
            attention,
            ln_conv,
            conv,
            conv_out,
        }
    }

    pub fn num_params(&self) -> usize {
        let att = self.attention.map_or(0, |a| {
            a.ln1.num_params() + a.msa.num_params() + a.ln2.num_params() + a.mlp1.num_params() + a.mlp2.num_params()
        });
        self.temb.num_params() + att + self.ln_conv.num_params() + self.conv.num_params() + self.conv_out.num_params()
    }

    /// `x` is `tokens x channels` on `grid`; `temb` is `1 x temb_dim`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, temb: Var, grid: [usize; 3]) -> Result<Var> {
        let tb = self.temb.forward(g, p, temb);
        let h = g.add_row(x, tb);
        let y = self.ln_conv.forward(g, p, h);
        let y = self.conv.forward(g, p, y, grid);
        let y = g.gelu(y);
        let conv = self.conv_out.forward(g, p, y);
        let Some(a) = &self.attention else {
            return Ok(g.add(h, conv));
        };
        let u = a.ln1.forward(g, p, h);
        let att = a.msa.forward(g, p, u, grid)?;
        let u = g.add(h, att);
        let m = a.ln2.forward(g, p, u);
        let m = a.mlp1.forward(g, p, m);
        let m = g.gelu(m);
        let m = a.mlp2.forward(g, p, m);
        let out = g.add(u, m);
        Ok(g.add(out, conv))
    }
}

/// Sinusoidal features of a diffusion step: `dim / 2` sines followed by
/// the matching cosines over geometrically spaced frequencies.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}
