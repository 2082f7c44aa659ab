//! Histogram entropy of LR frames and selection of the key timestep used for
//! fine-tuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{TimeSeries, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub bins: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig { bins: 256 }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("entropy bins must be >= 2, got {}", self.bins)));
        }
        Ok(())
    }
}

/// Bin of `v` in `bins` equal-width bins over `[lo, hi]`; `hi` itself lands
/// in the last bin.
pub fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let u = (v - lo) / (hi - lo) * bins as f64;
    if u <= 0.0 {
        0
    } else {
        (u as usize).min(bins - 1)
    }
}

/// `-sum p ln p` over a histogram; empty bins contribute nothing.
pub fn histogram_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Global `(min, max)` over every frame's scalar view.
pub fn series_range(series: &TimeSeries) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for frame in series.frames() {
        let (a, b) = frame.scalar_view().min_max();
        lo = lo.min(a as f64);
        hi = hi.max(b as f64);
    }
    Ok((lo, hi))
}

/// Entropy of one frame histogrammed over a shared `range`.
pub fn frame_entropy(vol: &Volume, cfg: &EntropyConfig, range: (f64, f64)) -> Result<f64> {
    cfg.validate()?;
    let (lo, hi) = range;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::DegenerateRange { min: lo, max: hi });
    }
    let view = vol.scalar_view();
    let mut counts = vec![0u64; cfg.bins];
    for &v in view.values() {
        counts[bin_of(v as f64, lo, hi, cfg.bins)] += 1;
    }
    Ok(histogram_entropy(&counts))
}

/// Per-frame entropies over the global series range. A series whose values
/// are all identical has zero entropy everywhere.
pub fn entropy_table(series: &TimeSeries, cfg: &EntropyConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let range = series_range(series)?;
    if range.1 <= range.0 {
        return Ok(vec![0.0; series.len()]);
    }
    series.frames().iter().map(|f| frame_entropy(f, cfg, range)).collect()
}

/// Position of the maximum-entropy frame; ties go to the earliest frame.
pub fn select_keyframe(series: &TimeSeries, cfg: &EntropyConfig) -> Result<usize> {
    let table = entropy_table(series, cfg)?;
    Ok(argmax_first(&table))
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{GridSpec, ScalarVolume};
    use proptest::prelude::*;

    fn scalar(values: Vec<f32>) -> Volume {
        // flat test data laid out on a 2 x 2 x n/4 grid
        let n = values.len();
        Volume::Scalar(ScalarVolume::new(GridSpec::unit([2, 2, n / 4]).unwrap(), values).unwrap())
    }

    fn series(frames: Vec<Vec<f32>>) -> TimeSeries {
        let t = (0..frames.len() as i64).collect();
        TimeSeries::new(frames.into_iter().map(scalar).collect(), t).unwrap()
    }

    #[test]
    fn constant_frame_has_zero_entropy() {
        let h = frame_entropy(&scalar(vec![0.3; 64]), &EntropyConfig::default(), (0.0, 1.0)).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn two_bin_centers_give_ln2() {
        let bins = 256;
        let w = 1.0 / bins as f32;
        let mut v = vec![3.5 * w; 32];
        v.extend(vec![200.5 * w; 32]);
        let h = frame_entropy(&scalar(v), &EntropyConfig { bins }, (0.0, 1.0)).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_over_all_bins_is_maximal() {
        let v: Vec<f32> = (0..512).map(|i| ((i % 256) as f32 + 0.5) / 256.0).collect();
        let h = frame_entropy(&scalar(v), &EntropyConfig::default(), (0.0, 1.0)).unwrap();
        assert!((h - 256f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_range_and_bad_bins_error() {
        let f = scalar(vec![1.0; 8]);
        assert!(matches!(
            frame_entropy(&f, &EntropyConfig::default(), (1.0, 1.0)),
            Err(Error::DegenerateRange { .. })
        ));
        assert!(frame_entropy(&f, &EntropyConfig { bins: 1 }, (0.0, 2.0)).is_err());
    }

    #[test]
    fn noise_frame_is_selected() {
        let noise: Vec<f32> = (0..64).map(|i| ((i * 37 % 64) as f32) / 63.0).collect();
        let s = series(vec![vec![0.5; 64], noise, vec![0.5; 64]]);
        assert_eq!(select_keyframe(&s, &EntropyConfig::default()).unwrap(), 1);
    }

    #[test]
    fn ties_and_single_frames() {
        let f: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let s = series(vec![f.clone(), f.clone()]);
        assert_eq!(select_keyframe(&s, &EntropyConfig::default()).unwrap(), 0);
        let one = series(vec![f]);
        assert_eq!(select_keyframe(&one, &EntropyConfig::default()).unwrap(), 0);
        let flat = series(vec![vec![2.0; 8], vec![2.0; 8]]);
        assert_eq!(select_keyframe(&flat, &EntropyConfig::default()).unwrap(), 0);
    }

    #[test]
    fn vector_frames_use_magnitude() {
        let g = GridSpec::unit([2, 2, 2]).unwrap();
        let u = ScalarVolume::new(g.clone(), [3.0, 0.0, 0.0, 1.0].repeat(2)).unwrap();
        let v = ScalarVolume::new(g.clone(), [4.0, 5.0, 0.0, 0.0].repeat(2)).unwrap();
        let w = ScalarVolume::new(g, [0.0, 0.0, 5.0, 0.0].repeat(2)).unwrap();
        let vol = Volume::Vector(crate::volume::VectorVolume::new(u, v, w).unwrap());
        // magnitudes 5,5,5,1: two occupied bins with p = 3/4, 1/4
        let h = frame_entropy(&vol, &EntropyConfig { bins: 4 }, (1.0, 5.0)).unwrap();
        let e = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((h - e).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn entropy_bounded_and_affine_invariant(
            frames in prop::collection::vec(prop::collection::vec((-20i32..20).prop_map(|v| v as f32), 24), 1..6),
            exponent in -2i32..3,
            shift in -30i32..30,
        ) {
            let cfg = EntropyConfig { bins: 16 };
            let s = series(frames.clone());
            let table = entropy_table(&s, &cfg).unwrap();
            for &h in &table {
                prop_assert!(h >= 0.0 && h <= (16f64).ln() + 1e-12);
            }
            // integer data with dyadic scales keeps the binning exact in floating point
            let k = 2f32.powi(exponent);
            let shifted = series(frames.iter().map(|f| f.iter().map(|&v| v * k + shift as f32).collect()).collect());
            prop_assert_eq!(
                select_keyframe(&s, &cfg).unwrap(),
                select_keyframe(&shifted, &cfg).unwrap()
            );
        }
    }
}
