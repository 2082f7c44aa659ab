//! Raw little-endian float32 frames with a JSON sidecar.
//!
//! A series lives in one directory: `series.json` plus one `frame_<t>.raw`
//! per timestep. Vector components are interleaved per voxel (`u v w u v w ...`),
//! voxels in x-fastest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridSpec, ScalarVolume, TimeSeries, Volume};
use crate::error::{Error, Result};

pub const SIDECAR_FILE: &str = "series.json";
const DTYPE_F32: &str = "float32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub components: usize,
    pub dtype: String,
    pub timesteps: Vec<i64>,
}

impl RawSidecar {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.dims, self.spacing, self.origin)
    }
}

fn frame_file(t: i64) -> String {
    format!("frame_{t}.raw")
}

/// Writes `series` into `dir` (created if needed) and returns the sidecar path.
pub fn save_raw(series: &TimeSeries, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = series.grid();
    let comps = series.num_components();
    let sidecar = RawSidecar {
        dims: grid.dims,
        spacing: grid.spacing,
        origin: grid.origin,
        components: comps,
        dtype: DTYPE_F32.to_string(),
        timesteps: series.timesteps().to_vec(),
    };
    for (frame, &t) in series.frames().iter().zip(series.timesteps()) {
        let channels = frame.channels();
        let n = grid.len();
        let mut bytes = Vec::with_capacity(n * comps * 4);
        for i in 0..n {
            for ch in &channels {
                bytes.extend_from_slice(&ch.values()[i].to_le_bytes());
            }
        }
        let path = dir.join(frame_file(t));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a series. `path` may be the sidecar itself or its directory.
pub fn load_raw(path: &Path) -> Result<TimeSeries> {
    let sidecar_path = if path.is_dir() {
        path.join(SIDECAR_FILE)
    } else {
        path.to_path_buf()
    };
    if !sidecar_path.is_file() {
        return Err(Error::MissingSidecar(sidecar_path));
    }
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: RawSidecar = serde_json::from_str(&text)?;
    if sidecar.dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDType(sidecar.dtype));
    }
    if sidecar.components != 1 && sidecar.components != 3 {
        return Err(Error::InvalidSeries(format!(
            "components must be 1 or 3, got {}",
            sidecar.components
        )));
    }
    let grid = sidecar.grid()?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let n = grid.len();
    let comps = sidecar.components;
    let mut frames = Vec::with_capacity(sidecar.timesteps.len());
    for &t in &sidecar.timesteps {
        let path = dir.join(frame_file(t));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = n * comps;
        if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
            return Err(Error::SizeMismatch {
                path,
                expected,
                actual: bytes.len() / 4,
            });
        }
        let mut channels = vec![Vec::with_capacity(n); comps];
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            channels[k % comps].push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let channels = channels
            .into_iter()
            .map(|values| ScalarVolume::new(grid.clone(), values))
            .collect::<Result<Vec<_>>>()?;
        frames.push(Volume::from_channels(channels)?);
    }
    TimeSeries::new(frames, sidecar.timesteps)
}
