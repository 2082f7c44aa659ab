use serde::{Deserialize, Serialize};

use super::{ScalarVolume, TimeSeries, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    MinMax,
}

/// Affine map of `[min_value, max_value]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min_value: f64,
    pub max_value: f64,
    pub mode: NormalizationMode,
}

impl NormalizationParams {
    pub fn new(min_value: f64, max_value: f64) -> Result<Self> {
        if !(max_value > min_value) || !min_value.is_finite() || !max_value.is_finite() {
            return Err(Error::DegenerateRange {
                min: min_value,
                max: max_value,
            });
        }
        Ok(NormalizationParams {
            min_value,
            max_value,
            mode: NormalizationMode::MinMax,
        })
    }

    /// Fits the range of every value yielded by `values`.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f32>) -> Result<Self> {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            });
        Self::new(lo, hi)
    }

    pub fn range(&self) -> f64 {
        self.max_value - self.min_value
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min_value) / self.range()
    }

    #[inline]
    pub fn inverse(&self, u: f64) -> f64 {
        u * self.range() + self.min_value
    }

    /// Maps into the `[-1, 1]` space the diffusion model works in.
    #[inline]
    pub fn to_model(&self, v: f64) -> f64 {
        2.0 * self.forward(v) - 1.0
    }

    #[inline]
    pub fn from_model(&self, m: f64) -> f64 {
        self.inverse(0.5 * (m + 1.0))
    }

    pub fn apply(&self, vol: &ScalarVolume) -> Result<ScalarVolume> {
        vol.map(|v| self.forward(v as f64) as f32)
    }

    pub fn invert(&self, vol: &ScalarVolume) -> Result<ScalarVolume> {
        vol.map(|u| self.inverse(u as f64) as f32)
    }
}

/// Min-max normalizes a single scalar volume onto `[0, 1]`.
pub fn normalize(vol: &ScalarVolume) -> Result<(ScalarVolume, NormalizationParams)> {
    let params = NormalizationParams::fit(vol.values())?;
    Ok((params.apply(vol)?, params))
}

pub fn denormalize(vol: &ScalarVolume, params: &NormalizationParams) -> Result<ScalarVolume> {
    params.invert(vol)
}

/// Fits one parameter set per component, globally over every frame of the
/// series, and returns the normalized series.
pub fn normalize_series(series: &TimeSeries) -> Result<(TimeSeries, Vec<NormalizationParams>)> {
    let comps = series.num_components();
    let params = (0..comps)
        .map(|c| {
            NormalizationParams::fit(
                series
                    .frames()
                    .iter()
                    .flat_map(move |f| f.channels()[c].values().iter()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized = series.map_frames(|f| {
        let channels = f
            .channels()
            .into_iter()
            .zip(&params)
            .map(|(ch, p)| p.apply(ch))
            .collect::<Result<Vec<_>>>()?;
        Volume::from_channels(channels)
    })?;
    Ok((normalized, params))
}
