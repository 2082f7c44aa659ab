use super::{ScalarVolume, Volume};
use crate::error::{Error, Result};

/// Decimates by `factor`, sampling the trilinear interpolant of the input at
/// the LR voxel centers `(i + 0.5) * factor - 0.5` (in HR index space).
pub fn trilinear_downsample(hr: &Volume, factor: usize) -> Result<Volume> {
    hr.map_channels(|c| downsample_scalar(c, factor))
}

/// Center-aligned trilinear upsampling with clamped boundaries. HR voxel `j`
/// reads the LR field at `(j + 0.5) / factor - 0.5`.
pub fn trilinear_upsample(lr: &Volume, factor: usize) -> Result<Volume> {
    lr.map_channels(|c| upsample_scalar(c, factor))
}

pub(crate) fn downsample_scalar(hr: &ScalarVolume, factor: usize) -> Result<ScalarVolume> {
    if factor < 2 {
        return Err(Error::InvalidFactor(factor));
    }
    let grid = hr.grid().coarsened(factor)?;
    let f = factor as f64;
    let pos = |i: usize| (i as f64 + 0.5) * f - 0.5;
    ScalarVolume::from_fn(grid, |x, y, z| hr.sample_index([pos(x), pos(y), pos(z)]) as f32)
}

pub(crate) fn upsample_scalar(lr: &ScalarVolume, factor: usize) -> Result<ScalarVolume> {
    if factor < 2 {
        return Err(Error::InvalidFactor(factor));
    }
    let grid = lr.grid().refined(factor)?;
    let f = factor as f64;
    let pos = |j: usize| (j as f64 + 0.5) / f - 0.5;
    ScalarVolume::from_fn(grid, |x, y, z| lr.sample_index([pos(x), pos(y), pos(z)]) as f32)
}
