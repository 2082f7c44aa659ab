//! Dense volumes on regular grids and the time series built from them.
//!
//! Every array in this crate uses x-fastest linearization:
//! `index = x + nx * (y + ny * z)`.

mod io;
mod normalize;
mod resample;
mod synthetic;

pub use io::{load_raw, save_raw, RawSidecar, SIDECAR_FILE};
pub use normalize::{denormalize, normalize, normalize_series, NormalizationMode, NormalizationParams};
pub use resample::{trilinear_downsample, trilinear_upsample};
pub use synthetic::{make_synthetic, AbcFlowParams, GaussianBlobParams, SyntheticKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = GridSpec {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Unit spacing, origin at zero.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidGrid(format!(
                "all dims must be >= 2, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Physical position of voxel `(x, y, z)`.
    pub fn position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Physical extent of the sampled box, i.e. the bounds of the first and
    /// last voxel positions along each axis.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut hi = [0.0; 3];
        for a in 0..3 {
            hi[a] = self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a];
        }
        (self.origin, hi)
    }

    /// Grid of the volume obtained by center-aligned decimation by `factor`.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::InvalidFactor(factor));
        }
        if self.dims.iter().any(|d| d % factor != 0) {
            return Err(Error::NonDivisibleDims {
                dims: self.dims,
                divisor: factor,
            });
        }
        let f = factor as f64;
        let mut dims = [0; 3];
        let mut spacing = [0.0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            dims[a] = self.dims[a] / factor;
            spacing[a] = self.spacing[a] * f;
            origin[a] = self.origin[a] + 0.5 * (f - 1.0) * self.spacing[a];
        }
        GridSpec::new(dims, spacing, origin)
    }

    /// Inverse of [`GridSpec::coarsened`].
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(Error::InvalidFactor(factor));
        }
        let f = factor as f64;
        let mut dims = [0; 3];
        let mut spacing = [0.0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            dims[a] = self.dims[a] * factor;
            spacing[a] = self.spacing[a] / f;
            origin[a] = self.origin[a] - 0.5 * (f - 1.0) * spacing[a];
        }
        GridSpec::new(dims, spacing, origin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    grid: GridSpec,
    values: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(grid: GridSpec, values: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::DimMismatch {
                expected: vec![grid.len()],
                actual: vec![values.len()],
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ScalarVolume { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f32) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel index.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [nx, ny, nz] = grid.dims;
        let mut values = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    values.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.grid.index(x, y, z)]
    }

    /// Returns `(min, max)` over all voxels.
    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Trilinear interpolation at a continuous index-space position,
    /// clamped to the grid.
    pub fn sample_index(&self, p: [f64; 3]) -> f64 {
        let d = self.grid.dims;
        let mut i0 = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let hi = (d[a] - 1) as f64;
            let c = p[a].clamp(0.0, hi);
            let base = (c.floor() as usize).min(d[a].saturating_sub(2));
            i0[a] = base;
            t[a] = c - base as f64;
        }
        let v = |x: usize, y: usize, z: usize| self.values[self.grid.index(x, y, z)] as f64;
        let [x0, y0, z0] = i0;
        let (x1, y1, z1) = (
            (x0 + 1).min(d[0] - 1),
            (y0 + 1).min(d[1] - 1),
            (z0 + 1).min(d[2] - 1),
        );
        let [tx, ty, tz] = t;
        // `a + t (b - a)` reproduces equal neighbours exactly
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), tx);
        let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), tx);
        let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), tx);
        let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), tx);
        lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz)
    }

    /// Applies `f` voxel-wise, keeping the grid.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorVolume {
    components: [ScalarVolume; 3],
}

impl VectorVolume {
    pub fn new(u: ScalarVolume, v: ScalarVolume, w: ScalarVolume) -> Result<Self> {
        if u.grid() != v.grid() || u.grid() != w.grid() {
            return Err(Error::InvalidGrid(
                "vector components must share one grid".into(),
            ));
        }
        Ok(VectorVolume {
            components: [u, v, w],
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[ScalarVolume; 3] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &ScalarVolume {
        &self.components[axis]
    }

    /// Velocity at voxel `i` (linear index).
    pub fn at(&self, i: usize) -> [f32; 3] {
        [
            self.components[0].values[i],
            self.components[1].values[i],
            self.components[2].values[i],
        ]
    }

    pub fn magnitude(&self) -> ScalarVolume {
        let n = self.grid().len();
        let values = (0..n)
            .map(|i| {
                let [a, b, c] = self.at(i);
                ((a as f64).powi(2) + (b as f64).powi(2) + (c as f64).powi(2)).sqrt() as f32
            })
            .collect();
        ScalarVolume {
            grid: self.grid().clone(),
            values,
        }
    }

    /// Trilinearly interpolated velocity at a continuous index position.
    pub fn sample_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            self.components[0].sample_index(p),
            self.components[1].sample_index(p),
            self.components[2].sample_index(p),
        ]
    }
}

/// A frame payload: one scalar field or one three-component vector field.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Vector(VectorVolume),
}

impl Volume {
    pub fn grid(&self) -> &GridSpec {
        match self {
            Volume::Scalar(s) => s.grid(),
            Volume::Vector(v) => v.grid(),
        }
    }

    pub fn num_components(&self) -> usize {
        match self {
            Volume::Scalar(_) => 1,
            Volume::Vector(_) => 3,
        }
    }

    pub fn channels(&self) -> Vec<&ScalarVolume> {
        match self {
            Volume::Scalar(s) => vec![s],
            Volume::Vector(v) => v.components.iter().collect(),
        }
    }

    /// Reassembles a frame from 1 or 3 channels.
    pub fn from_channels(mut channels: Vec<ScalarVolume>) -> Result<Self> {
        match channels.len() {
            1 => Ok(Volume::Scalar(channels.pop().unwrap())),
            3 => {
                let w = channels.pop().unwrap();
                let v = channels.pop().unwrap();
                let u = channels.pop().unwrap();
                Ok(Volume::Vector(VectorVolume::new(u, v, w)?))
            }
            n => Err(Error::InvalidSeries(format!(
                "frames need 1 or 3 components, got {n}"
            ))),
        }
    }

    pub fn map_channels(&self, f: impl Fn(&ScalarVolume) -> Result<ScalarVolume>) -> Result<Self> {
        let channels = self.channels().into_iter().map(f).collect::<Result<Vec<_>>>()?;
        Volume::from_channels(channels)
    }

    /// The scalar reduction used for histogramming: the field itself, or the
    /// velocity magnitude for vector fields.
    pub fn scalar_view(&self) -> std::borrow::Cow<'_, ScalarVolume> {
        match self {
            Volume::Scalar(s) => std::borrow::Cow::Borrowed(s),
            Volume::Vector(v) => std::borrow::Cow::Owned(v.magnitude()),
        }
    }

    pub fn as_vector(&self) -> Option<&VectorVolume> {
        match self {
            Volume::Vector(v) => Some(v),
            Volume::Scalar(_) => None,
        }
    }
}

/// Ordered frames sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    grid: GridSpec,
    frames: Vec<Volume>,
    timesteps: Vec<i64>,
}

impl TimeSeries {
    pub fn new(frames: Vec<Volume>, timesteps: Vec<i64>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySeries)?;
        if frames.len() != timesteps.len() {
            return Err(Error::InvalidSeries(format!(
                "{} frames but {} timestep indices",
                frames.len(),
                timesteps.len()
            )));
        }
        let grid = first.grid().clone();
        let comps = first.num_components();
        for f in &frames {
            if f.grid() != &grid {
                return Err(Error::InvalidSeries("frames must share one grid".into()));
            }
            if f.num_components() != comps {
                return Err(Error::InvalidSeries(
                    "frames must share one component count".into(),
                ));
            }
        }
        if timesteps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSeries(
                "timestep indices must be strictly increasing".into(),
            ));
        }
        Ok(TimeSeries {
            grid,
            frames,
            timesteps,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn frames(&self) -> &[Volume] {
        &self.frames
    }

    pub fn timesteps(&self) -> &[i64] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.frames[0].num_components()
    }

    pub fn position_of(&self, timestep: i64) -> Option<usize> {
        self.timesteps.iter().position(|&t| t == timestep)
    }

    pub fn frame_at(&self, timestep: i64) -> Option<&Volume> {
        self.position_of(timestep).map(|i| &self.frames[i])
    }

    /// Keeps only the frames at the given positions, in order.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        let frames = positions.iter().map(|&i| self.frames[i].clone()).collect();
        let timesteps = positions.iter().map(|&i| self.timesteps[i]).collect();
        TimeSeries::new(frames, timesteps)
    }

    pub fn map_frames(&self, f: impl Fn(&Volume) -> Result<Volume>) -> Result<Self> {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        TimeSeries::new(frames, self.timesteps.clone())
    }

    pub fn into_parts(self) -> (Vec<Volume>, Vec<i64>) {
        (self.frames, self.timesteps)
    }
}
