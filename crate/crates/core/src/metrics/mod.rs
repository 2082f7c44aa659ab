//! Reconstruction quality: PSNR, a rendered-image perceptual score, and
//! Chamfer distance between traced streamlines.

mod chamfer;
mod plot;
mod render;
mod streamline;

pub use chamfer::{chamfer, chamfer_points};
pub use plot::line_chart_png;
pub use render::{render_mip, Camera, Image, RenderConfig};
pub use streamline::{
    trace_streamlines, SeedSet, Streamline, Termination, TraceConfig, DEFAULT_MAX_STEPS,
    DEFAULT_NUM_SEEDS,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{TimeSeries, Volume};

fn check_same_dims(truth: &Volume, recon: &Volume) -> Result<()> {
    let shape = |v: &Volume| {
        let d = v.grid().dims;
        vec![v.num_components(), d[0], d[1], d[2]]
    };
    if shape(truth) != shape(recon) {
        return Err(Error::DimMismatch {
            expected: shape(truth),
            actual: shape(recon),
        });
    }
    Ok(())
}

/// PSNR over raw value arrays with peak `r = max - min` of the truth.
pub fn psnr_values(truth: &[f32], recon: &[f32]) -> Result<f64> {
    if truth.len() != recon.len() {
        return Err(Error::DimMismatch {
            expected: vec![truth.len()],
            actual: vec![recon.len()],
        });
    }
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v as f64), h.max(v as f64)));
    if !(hi > lo) {
        return Err(Error::DegenerateRange { min: lo, max: hi });
    }
    let mse = truth
        .iter()
        .zip(recon)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let r = hi - lo;
    Ok(10.0 * (r * r / mse).log10())
}

/// PSNR in dB. Vector fields are scored jointly over all three components.
pub fn psnr(truth: &Volume, recon: &Volume) -> Result<f64> {
    check_same_dims(truth, recon)?;
    let flat = |v: &Volume| v.channels().iter().flat_map(|c| c.values().iter().copied()).collect::<Vec<_>>();
    psnr_values(&flat(truth), &flat(recon))
}

/// Dissimilarity between two rendered images; 0 means identical.
pub trait ImageMetric: Sync {
    fn dissimilarity(&self, a: &Image, b: &Image) -> f64;
}

/// `(1 - SSIM) / 2` with uniform square windows. The dynamic range is taken
/// from both images jointly so the score is symmetric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimDissimilarity {
    pub window: usize,
}

impl Default for SsimDissimilarity {
    fn default() -> Self {
        SsimDissimilarity { window: 7 }
    }
}

impl SsimDissimilarity {
    pub fn ssim(&self, a: &Image, b: &Image) -> f64 {
        assert_eq!((a.width, a.height), (b.width, b.height), "image sizes differ");
        let (lo, hi) = a
            .pixels
            .iter()
            .chain(&b.pixels)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let range = hi - lo;
        if !(range > 0.0) {
            return 1.0;
        }
        let c1 = (0.01 * range).powi(2);
        let c2 = (0.03 * range).powi(2);
        let wx = self.window.min(a.width).max(1);
        let wy = self.window.min(a.height).max(1);
        let n = (wx * wy) as f64;
        let mut total = 0.0;
        let mut count = 0usize;
        for y0 in 0..=a.height - wy {
            for x0 in 0..=a.width - wx {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + wy {
                    for x in x0..x0 + wx {
                        let (p, q) = (a.get(x, y), b.get(x, y));
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }
}

impl ImageMetric for SsimDissimilarity {
    fn dissimilarity(&self, a: &Image, b: &Image) -> f64 {
        if a == b {
            return 0.0;
        }
        ((1.0 - self.ssim(a, b)) / 2.0).clamp(0.0, 1.0)
    }
}

/// Mean image dissimilarity over the configured viewpoints. Vector fields are
/// rendered through their magnitude.
pub fn perceptual_score(
    truth: &Volume,
    recon: &Volume,
    cfg: &RenderConfig,
    metric: &dyn ImageMetric,
) -> Result<f64> {
    check_same_dims(truth, recon)?;
    cfg.validate()?;
    let (t, r) = (truth.scalar_view(), recon.scalar_view());
    let cams = cfg.cameras(t.dims());
    let scores: Vec<f64> = cams
        .iter()
        .map(|c| metric.dissimilarity(&render_mip(&t, c), &render_mip(&r, c)))
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub render: RenderConfig,
    pub trace: TraceConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub timestep: i64,
    pub psnr_db: f64,
    pub perceptual: f64,
    /// Only present for vector fields.
    pub chamfer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr_db: f64,
    pub mean_perceptual: f64,
    pub mean_chamfer: Option<f64>,
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr_db,perceptual,chamfer\n");
        let cd = |c: Option<f64>| c.map(fmt_value).unwrap_or_default();
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                f.timestep,
                fmt_value(f.psnr_db),
                fmt_value(f.perceptual),
                cd(f.chamfer)
            );
        }
        let _ = writeln!(
            out,
            "mean,{},{},{}",
            fmt_value(self.mean_psnr_db),
            fmt_value(self.mean_perceptual),
            cd(self.mean_chamfer)
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// One PNG line chart per metric; returns the written paths.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut series: Vec<(&str, Vec<f64>)> = vec![
            ("psnr_db", self.frames.iter().map(|f| f.psnr_db).collect()),
            ("perceptual", self.frames.iter().map(|f| f.perceptual).collect()),
        ];
        if self.mean_chamfer.is_some() {
            series.push(("chamfer", self.frames.iter().filter_map(|f| f.chamfer).collect()));
        }
        let mut written = Vec::new();
        for (name, values) in series {
            let path = dir.join(format!("{name}.png"));
            line_chart_png(&values, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-frame and mean metrics with the default image metric.
pub fn evaluate_series(truth: &TimeSeries, recon: &TimeSeries, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_series_with(truth, recon, cfg, &SsimDissimilarity::default())
}

pub fn evaluate_series_with(
    truth: &TimeSeries,
    recon: &TimeSeries,
    cfg: &EvalConfig,
    metric: &dyn ImageMetric,
) -> Result<EvalReport> {
    if truth.len() != recon.len() {
        return Err(Error::FrameCountMismatch {
            truth: truth.len(),
            recon: recon.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptySeries);
    }
    let seeds = SeedSet::halton(truth.grid(), cfg.trace.num_seeds, cfg.trace.seed);
    let step = cfg.trace.step_for(truth.grid());
    let frames = truth
        .frames()
        .par_iter()
        .zip(recon.frames().par_iter())
        .zip(truth.timesteps().par_iter())
        .map(|((t, r), &timestep)| {
            let psnr_db = psnr(t, r)?;
            let perceptual = perceptual_score(t, r, &cfg.render, metric)?;
            let chamfer = match (t.as_vector(), r.as_vector()) {
                (Some(tv), Some(rv)) => {
                    let a = trace_streamlines(tv, &seeds, step, cfg.trace.max_steps)?;
                    let b = trace_streamlines(rv, &seeds, step, cfg.trace.max_steps)?;
                    Some(chamfer(&a, &b)?)
                }
                _ => None,
            };
            Ok(FrameMetrics {
                timestep,
                psnr_db,
                perceptual,
                chamfer,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_chamfer = frames
        .iter()
        .map(|f| f.chamfer)
        .collect::<Option<Vec<_>>>()
        .map(|c| mean(c.into_iter()));
    Ok(EvalReport {
        mean_psnr_db: mean(frames.iter().map(|f| f.psnr_db)),
        mean_perceptual: mean(frames.iter().map(|f| f.perceptual)),
        mean_chamfer,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_synthetic, GridSpec, ScalarVolume, SyntheticKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scalar(values: Vec<f32>) -> Volume {
        // flat test data laid out on a 2 x 2 x n/4 grid
        let n = values.len();
        Volume::Scalar(ScalarVolume::new(GridSpec::unit([2, 2, n / 4]).unwrap(), values).unwrap())
    }

    #[test]
    fn psnr_hand_values() {
        // range 1, every error 0.1 -> MSE 0.01
        let t: Vec<f32> = vec![0.0, 1.0, 0.5, 0.25, 0.75, 0.125, 0.5, 0.0];
        let r: Vec<f32> = t.iter().map(|v| v + 0.1).collect();
        let mse: f64 = t.iter().zip(&r).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>() / 8.0;
        let got = psnr_values(&t, &r).unwrap();
        assert!((got - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
        assert!((got - 20.0).abs() < 1e-5);
        let t2: Vec<f32> = t.iter().map(|v| v * 2.0).collect();
        let r2: Vec<f32> = t2.iter().map(|v| v + 0.1).collect();
        assert!((psnr_values(&t2, &r2).unwrap() - 10.0 * 400f64.log10()).abs() < 1e-4);
        assert_eq!(psnr(&scalar(t.clone()), &scalar(t)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_errors() {
        assert!(matches!(psnr(&scalar(vec![1.0; 8]), &scalar(vec![0.0; 8])), Err(Error::DegenerateRange { .. })));
        assert!(matches!(psnr(&scalar(vec![0.5; 8]), &scalar(vec![0.0; 12])), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let t: Vec<f32> = (0..512).map(|i| ((i as f32) * 0.37).sin()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<f32> = (0..512).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.001f32, 0.01, 0.05, 0.2, 1.0] {
            let r: Vec<f32> = t.iter().zip(&z).map(|(a, n)| a + amp * n).collect();
            let p = psnr_values(&t, &r).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    fn blob_series(frames: usize) -> TimeSeries {
        let t: Vec<i64> = (0..frames as i64).collect();
        make_synthetic(&SyntheticKind::GaussianBlobs(Default::default()), &GridSpec::unit([12; 3]).unwrap(), &t, 3).unwrap()
    }

    #[test]
    fn perceptual_is_zero_on_identity_and_symmetric() {
        let s = blob_series(2);
        let (a, b) = (&s.frames()[0], &s.frames()[1]);
        let cfg = RenderConfig { width: 16, height: 16, ..Default::default() };
        let m = SsimDissimilarity::default();
        assert_eq!(perceptual_score(a, a, &cfg, &m).unwrap(), 0.0);
        let ab = perceptual_score(a, b, &cfg, &m).unwrap();
        let ba = perceptual_score(b, a, &cfg, &m).unwrap();
        assert!(ab > 0.0 && ab <= 1.0);
        assert!((ab - ba).abs() < 1e-12);
        // the score is the plain mean of the per-view scores
        let views: Vec<f64> = cfg
            .cameras(a.grid().dims)
            .iter()
            .map(|c| {
                m.dissimilarity(&render_mip(&a.scalar_view(), c), &render_mip(&b.scalar_view(), c))
            })
            .collect();
        assert_eq!(views.len(), 5);
        assert!((ab - views.iter().sum::<f64>() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn identity_report_on_vector_data() {
        let s = make_synthetic(
            &SyntheticKind::AbcFlow(Default::default()),
            &crate::volume::AbcFlowParams::periodic_grid(10).unwrap(),
            &[0, 1, 2],
            1,
        )
        .unwrap();
        let cfg = EvalConfig {
            trace: TraceConfig { num_seeds: 20, max_steps: 50, ..Default::default() },
            render: RenderConfig { width: 12, height: 12, ..Default::default() },
        };
        let rep = evaluate_series(&s, &s, &cfg).unwrap();
        assert_eq!(rep.frames.len(), 3);
        for f in &rep.frames {
            assert_eq!(f.psnr_db, f64::INFINITY);
            assert_eq!(f.perceptual, 0.0);
            assert_eq!(f.chamfer, Some(0.0));
        }
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        assert!(csv.lines().last().unwrap().starts_with("mean,inf,0.000000,0.000000"));
    }

    #[test]
    fn means_are_arithmetic_averages() {
        let truth = blob_series(4);
        let recon = truth
            .map_frames(|f| f.map_channels(|c| c.map(|v| v * 0.9 + 0.01)))
            .unwrap();
        let cfg = EvalConfig {
            render: RenderConfig { width: 12, height: 12, ..Default::default() },
            ..Default::default()
        };
        let rep = evaluate_series(&truth, &recon, &cfg).unwrap();
        let n = rep.frames.len() as f64;
        let mp = rep.frames.iter().map(|f| f.psnr_db).sum::<f64>() / n;
        let mq = rep.frames.iter().map(|f| f.perceptual).sum::<f64>() / n;
        assert!((rep.mean_psnr_db - mp).abs() < 1e-12);
        assert!((rep.mean_perceptual - mq).abs() < 1e-12);
        assert_eq!(rep.mean_chamfer, None);
        let dir = tempfile::tempdir().unwrap();
        let plots = rep.write_plots(dir.path()).unwrap();
        assert_eq!(plots.len(), 2);
        assert!(plots.iter().all(|p| p.exists()));
    }

    #[test]
    fn frame_count_mismatch() {
        let s = blob_series(3);
        let short = s.select(&[0, 1]).unwrap();
        assert!(matches!(
            evaluate_series(&s, &short, &EvalConfig::default()),
            Err(Error::FrameCountMismatch { truth: 3, recon: 2 })
        ));
    }
}
