//! Layer building blocks shared by the encoder and the denoiser.

use std::sync::Arc;

use crate::autograd::{Bound, Graph, Initializer, ParamId, ParamSet, Real, Tensor, Var};
use crate::{Error, Result};

/// Affine map `x W + b` applied to every row.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(p: &mut ParamSet<f32>, init: &mut Initializer, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = p.add(format!("{name}.w"), init.uniform(fan_in, fan_out, fan_in));
        let b = p.add(format!("{name}.b"), init.uniform(1, fan_out, fan_in));
        Linear { w, b, fan_in, fan_out }
    }

    /// A layer whose weights and bias start at zero, so a residual branch
    /// ending in it is the identity at initialization.
    pub fn zeroed(p: &mut ParamSet<f32>, init: &mut Initializer, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = p.add(format!("{name}.w"), init.zeros(fan_in, fan_out));
        let b = p.add(format!("{name}.b"), init.zeros(1, fan_out));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p[self.w]);
        g.add_row(y, p[self.b])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl LayerNorm {
    pub fn new(p: &mut ParamSet<f32>, init: &mut Initializer, name: &str, channels: usize) -> Self {
        let gamma = p.add(format!("{name}.gamma"), init.ones(1, channels));
        let beta = p.add(format!("{name}.beta"), init.zeros(1, channels));
        LayerNorm { gamma, beta, channels }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.layer_norm(x, p[self.gamma], p[self.beta])
    }
}

/// 3x3x3 zero-padded convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv3 {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Conv3 {
    pub fn new(p: &mut ParamSet<f32>, init: &mut Initializer, name: &str, cin: usize, cout: usize) -> Self {
        let fan_in = 27 * cin;
        let w = p.add(format!("{name}.w"), init.uniform(fan_in, cout, fan_in));
        let b = p.add(format!("{name}.b"), init.uniform(1, cout, fan_in));
        Conv3 { w, b, cin, cout }
    }

    pub fn num_params(&self) -> usize {
        27 * self.cin * self.cout + self.cout
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, dims: [usize; 3]) -> Var {
        let y = g.conv3(x, p[self.w], dims);
        g.add_row(y, p[self.b])
    }
}

pub(crate) fn voxel_count(dims: [usize; 3]) -> usize {
    dims.iter().product()
}

/// Gather index that regroups a channels-last grid into non-overlapping
/// blocks of `block` voxels: row `r` of the output is one block, its columns
/// ordered `(offset within block, channel)` with x-fastest offsets.
pub fn block_partition_index(dims: [usize; 3], channels: usize, block: [usize; 3]) -> Result<(Vec<u32>, [usize; 3])> {
    for a in 0..3 {
        if block[a] == 0 || dims[a] % block[a] != 0 {
            return Err(Error::NonDivisibleDims {
                dims,
                divisor: block[a],
            });
        }
    }
    let coarse = [dims[0] / block[0], dims[1] / block[1], dims[2] / block[2]];
    let mut index = Vec::with_capacity(voxel_count(dims) * channels);
    for cz in 0..coarse[2] {
        for cy in 0..coarse[1] {
            for cx in 0..coarse[0] {
                for oz in 0..block[2] {
                    for oy in 0..block[1] {
                        for ox in 0..block[0] {
                            let x = cx * block[0] + ox;
                            let y = cy * block[1] + oy;
                            let z = cz * block[2] + oz;
                            let v = x + dims[0] * (y + dims[1] * z);
                            for c in 0..channels {
                                index.push((v * channels + c) as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((index, coarse))
}

/// Inverse permutation of a gather index.
pub fn invert_index(index: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; index.len()];
    for (i, &j) in index.iter().enumerate() {
        inv[j as usize] = i as u32;
    }
    inv
}

/// Expands a row permutation into an element gather index for `cols`
/// columns.
pub fn rows_to_elements(rows: &[u32], cols: usize) -> Vec<u32> {
    rows.iter()
        .flat_map(|&r| (0..cols).map(move |c| (r as usize * cols + c) as u32))
        .collect()
}

/// Cached space-to-depth and depth-to-space indices for a factor-2 resize.
#[derive(Debug, Clone)]
pub(crate) struct Resize2 {
    pub fine: [usize; 3],
    pub coarse: [usize; 3],
    pub down: Arc<Vec<u32>>,
    pub up: Arc<Vec<u32>>,
    pub channels_fine: usize,
}

impl Resize2 {
    /// `channels_fine` is the channel count on the fine grid.
    pub fn new(fine: [usize; 3], channels_fine: usize) -> Result<Self> {
        let (down, coarse) = block_partition_index(fine, channels_fine, [2, 2, 2])?;
        let up = invert_index(&down);
        Ok(Resize2 {
            fine,
            coarse,
            down: Arc::new(down),
            up: Arc::new(up),
            channels_fine,
        })
    }

    /// `fine voxels x c` to `coarse voxels x 8c`.
    pub fn space_to_depth<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let rows = voxel_count(self.coarse);
        g.gather(x, self.down.clone(), rows, 8 * self.channels_fine)
    }

    /// `coarse voxels x 8c` to `fine voxels x c`.
    pub fn depth_to_space<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let rows = voxel_count(self.fine);
        g.gather(x, self.up.clone(), rows, self.channels_fine)
    }
}

/// Channel means over all rows as a `1 x c` tensor, evaluated eagerly.
pub(crate) fn column_means(t: &Tensor<f32>) -> Vec<f32> {
    let mut acc = vec![0.0f64; t.cols];
    for r in t.data.chunks_exact(t.cols) {
        for (a, &v) in acc.iter_mut().zip(r) {
            *a += v as f64;
        }
    }
    acc.iter().map(|a| (a / t.rows as f64) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_partition_round_trips() {
        let dims = [4, 2, 6];
        let (idx, coarse) = block_partition_index(dims, 3, [2, 2, 2]).unwrap();
        assert_eq!(coarse, [2, 1, 3]);
        let inv = invert_index(&idx);
        let data: Vec<u32> = (0..idx.len() as u32).collect();
        let fwd: Vec<u32> = idx.iter().map(|&i| data[i as usize]).collect();
        let back: Vec<u32> = inv.iter().map(|&i| fwd[i as usize]).collect();
        assert_eq!(back, data);
    }

    #[test]
    fn first_block_holds_corner_voxels() {
        let (idx, _) = block_partition_index([4, 4, 4], 1, [2, 2, 2]).unwrap();
        assert_eq!(&idx[..8], &[0, 1, 4, 5, 16, 17, 20, 21]);
    }

    #[test]
    fn non_divisible_block_is_rejected() {
        assert!(matches!(
            block_partition_index([5, 4, 4], 1, [2, 2, 2]),
            Err(Error::NonDivisibleDims { .. })
        ));
    }
}
