//! Analytic stand-ins for simulation output.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GridSpec, ScalarVolume, TimeSeries, VectorVolume, Volume};
use crate::error::{Error, Result};

/// Arnold–Beltrami–Childress flow with a time-varying phase:
///
/// ```text
/// u = A sin(z + p) + C cos(y + p)
/// v = B sin(x + p) + A cos(z + p)
/// w = C sin(y + p) + B cos(x + p)
/// ```
///
/// with `p = phase_offset + phase_speed * t`, `A = a (1 + m sin p)` and
/// `B = b (1 + m cos p)` where `m` is `amplitude_modulation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcFlowParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub phase_speed: f64,
    pub phase_offset: f64,
    pub amplitude_modulation: f64,
}

impl Default for AbcFlowParams {
    fn default() -> Self {
        AbcFlowParams {
            a: 3f64.sqrt(),
            b: 2f64.sqrt(),
            c: 1.0,
            phase_speed: 0.25,
            phase_offset: 0.0,
            amplitude_modulation: 0.3,
        }
    }
}

impl AbcFlowParams {
    /// Periodic grid covering `[0, 2π)` with `n` voxels per axis.
    pub fn periodic_grid(n: usize) -> Result<GridSpec> {
        let h = 2.0 * PI / n as f64;
        GridSpec::new([n; 3], [h; 3], [0.0; 3])
    }

    pub fn velocity(&self, pos: [f64; 3], t: f64) -> [f64; 3] {
        let p = self.phase_offset + self.phase_speed * t;
        let m = self.amplitude_modulation;
        let a = self.a * (1.0 + m * p.sin());
        let b = self.b * (1.0 + m * p.cos());
        let c = self.c;
        let [x, y, z] = pos;
        [
            a * (z + p).sin() + c * (y + p).cos(),
            b * (x + p).sin() + a * (z + p).cos(),
            c * (y + p).sin() + b * (x + p).cos(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBlobParams {
    pub count: usize,
    /// Per-axis standard deviation range, as a fraction of the axis extent.
    pub sigma_range: [f64; 2],
    pub amplitude_range: [f64; 2],
    /// Drift per timestep, as a fraction of the smallest extent.
    pub speed: f64,
}

impl Default for GaussianBlobParams {
    fn default() -> Self {
        GaussianBlobParams {
            count: 6,
            sigma_range: [0.08, 0.2],
            amplitude_range: [0.5, 1.0],
            speed: 0.01,
        }
    }
}

/// One realized anisotropic Gaussian, in physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub center: [f64; 3],
    pub sigma: [f64; 3],
    pub amplitude: f64,
    pub velocity: [f64; 3],
}

impl Blob {
    pub fn center_at(&self, t: f64) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] + self.velocity[a] * t)
    }

    pub fn value(&self, pos: [f64; 3], t: f64) -> f64 {
        let c = self.center_at(t);
        let q: f64 = (0..3)
            .map(|a| ((pos[a] - c[a]) / self.sigma[a]).powi(2))
            .sum();
        self.amplitude * (-0.5 * q).exp()
    }
}

impl GaussianBlobParams {
    /// Draws the blobs for `grid` deterministically from `seed`.
    pub fn realize(&self, grid: &GridSpec, seed: u64) -> Vec<Blob> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = grid.bounds();
        let extent: [f64; 3] = std::array::from_fn(|a| hi[a] - lo[a]);
        let min_extent = extent.iter().cloned().fold(f64::INFINITY, f64::min);
        (0..self.count)
            .map(|_| {
                let center = std::array::from_fn(|a| lo[a] + extent[a] * rng.random_range(0.25..0.75));
                let sigma = std::array::from_fn(|a| {
                    extent[a] * rng.random_range(self.sigma_range[0]..=self.sigma_range[1])
                });
                let amplitude = rng.random_range(self.amplitude_range[0]..=self.amplitude_range[1]);
                // uniform direction on the sphere
                let cz: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let r = (1.0 - cz * cz).sqrt();
                let dir = [r * phi.cos(), r * phi.sin(), cz];
                let velocity = dir.map(|d| d * self.speed * min_extent);
                Blob {
                    center,
                    sigma,
                    amplitude,
                    velocity,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    AbcFlow(AbcFlowParams),
    GaussianBlobs(GaussianBlobParams),
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::AbcFlow(_) => "abc_flow",
            SyntheticKind::GaussianBlobs(_) => "gaussian_blobs",
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abc_flow" => Ok(SyntheticKind::AbcFlow(AbcFlowParams::default())),
            "gaussian_blobs" => Ok(SyntheticKind::GaussianBlobs(GaussianBlobParams::default())),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Samples the analytic field at every voxel of `grid` for each timestep.
/// The ABC flow ignores `seed`; blob placement is drawn from it.
pub fn make_synthetic(
    kind: &SyntheticKind,
    grid: &GridSpec,
    timesteps: &[i64],
    seed: u64,
) -> Result<TimeSeries> {
    grid.validate()?;
    if grid.dims.iter().any(|&d| d < 8) {
        return Err(Error::InvalidGrid(format!(
            "synthetic fields need dims >= 8, got {:?}",
            grid.dims
        )));
    }
    let frames = match kind {
        SyntheticKind::AbcFlow(p) => timesteps
            .iter()
            .map(|&t| {
                let mut comps: [Vec<f32>; 3] = Default::default();
                for z in 0..grid.dims[2] {
                    for y in 0..grid.dims[1] {
                        for x in 0..grid.dims[0] {
                            let v = p.velocity(grid.position(x, y, z), t as f64);
                            for a in 0..3 {
                                comps[a].push(v[a] as f32);
                            }
                        }
                    }
                }
                let [u, v, w] = comps;
                Ok(Volume::Vector(VectorVolume::new(
                    ScalarVolume::new(grid.clone(), u)?,
                    ScalarVolume::new(grid.clone(), v)?,
                    ScalarVolume::new(grid.clone(), w)?,
                )?))
            })
            .collect::<Result<Vec<_>>>()?,
        SyntheticKind::GaussianBlobs(p) => {
            let blobs = p.realize(grid, seed);
            timesteps
                .iter()
                .map(|&t| {
                    let vol = ScalarVolume::from_fn(grid.clone(), |x, y, z| {
                        let pos = grid.position(x, y, z);
                        blobs.iter().map(|b| b.value(pos, t as f64)).sum::<f64>() as f32
                    })?;
                    Ok(Volume::Scalar(vol))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    TimeSeries::new(frames, timesteps.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let g = GridSpec::unit([8, 8, 8]).unwrap();
        let k = SyntheticKind::GaussianBlobs(GaussianBlobParams::default());
        let a = make_synthetic(&k, &g, &[0, 1, 2], 7).unwrap();
        let b = make_synthetic(&k, &g, &[0, 1, 2], 7).unwrap();
        let c = make_synthetic(&k, &g, &[0, 1, 2], 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn abc_matches_closed_form() {
        let p = AbcFlowParams {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            phase_speed: 0.0,
            phase_offset: 0.0,
            amplitude_modulation: 0.0,
        };
        let g = AbcFlowParams::periodic_grid(8).unwrap();
        let s = make_synthetic(&SyntheticKind::AbcFlow(p), &g, &[0], 0).unwrap();
        let v = s.frames()[0].as_vector().unwrap();
        for (x, y, z) in [(0, 0, 0), (3, 5, 1), (7, 2, 6)] {
            let [px, py, pz] = g.position(x, y, z);
            let i = g.index(x, y, z);
            let [u, vv, w] = v.at(i);
            assert!((u as f64 - (pz.sin() + py.cos())).abs() < 1e-6);
            assert!((vv as f64 - (px.sin() + pz.cos())).abs() < 1e-6);
            assert!((w as f64 - (py.sin() + px.cos())).abs() < 1e-6);
        }
    }

    #[test]
    fn blob_maximum_drifts_along_velocity() {
        let g = GridSpec::new([32, 32, 32], [1.0 / 31.0; 3], [0.0; 3]).unwrap();
        let params = GaussianBlobParams {
            count: 1,
            sigma_range: [0.08, 0.1],
            amplitude_range: [1.0, 1.0],
            speed: 0.02,
        };
        let blob = &params.realize(&g, 3)[0];
        let steps: Vec<i64> = (0..10).collect();
        let s = make_synthetic(&SyntheticKind::GaussianBlobs(params), &g, &steps, 3).unwrap();
        let mut last = f64::NEG_INFINITY;
        for frame in s.frames() {
            let ch = frame.channels()[0];
            let (imax, _) = ch
                .values()
                .iter()
                .enumerate()
                .fold((0, f32::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let (x, y, z) = (imax % 32, (imax / 32) % 32, imax / 1024);
            let pos = g.position(x, y, z);
            let proj: f64 = (0..3).map(|a| pos[a] * blob.velocity[a]).sum();
            assert!(proj >= last - 1e-12, "projection went backwards");
            last = proj;
        }
    }

    #[test]
    fn unknown_kind_and_small_grid() {
        assert!(matches!("vortex".parse::<SyntheticKind>(), Err(Error::UnknownKind(_))));
        let g = GridSpec::unit([4, 8, 8]).unwrap();
        let k: SyntheticKind = "abc_flow".parse().unwrap();
        assert!(make_synthetic(&k, &g, &[0], 0).is_err());
    }
}
