use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::train::{fit_normalization, TargetMap};
use super::{derive_seed, Checkpoint};
use crate::diffusion::{make_condition, sample_scalar, ParameterizedPredictor, SamplerConfig};
use crate::error::Result;
use crate::volume::{ScalarVolume, TimeSeries, Volume};

/// Super-resolves every frame of `lr_series` by the checkpoint's scale
/// factor. Frame `i` draws its noise from a stream derived from `seed` and
/// `i`, so results do not depend on thread count.
///
/// The checkpoint's normalization is used when it has one entry per
/// component; otherwise ranges are fitted on the LR series.
pub fn superresolve(
    ckpt: &Checkpoint,
    lr_series: &TimeSeries,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<TimeSeries> {
    let cfg = &ckpt.config;
    let sched = cfg.schedule.build()?;
    let map = TargetMap::new(cfg, ckpt.residual_scale);
    let sampler = &SamplerConfig {
        clip_bound: sampler.clip_bound.or(Some(map.bound())),
        ..*sampler
    };
    sampler.validate(&sched)?;
    let predictor = ParameterizedPredictor {
        net: &ckpt.denoiser,
        parameterization: cfg.prediction,
        schedule: &sched,
    };
    let components = lr_series.num_components();
    let norm = if ckpt.normalization.len() == components {
        ckpt.normalization.clone()
    } else {
        fit_normalization(lr_series.frames().iter(), components, cfg.normalization_margin)?
    };
    let frames = lr_series
        .frames()
        .par_iter()
        .enumerate()
        .map(|(i, lr)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("frame-{i}")));
            let cond = make_condition(lr, cfg.scale_factor, Some(&norm))?.condition;
            let chans = cond
                .channels()
                .into_iter()
                .zip(&norm)
                .map(|(c, p)| {
                    let x0 = sample_scalar(&predictor, c, &sched, sampler, &mut rng)?;
                    let model = map.from_target(x0.values(), c.values());
                    let values = model.iter().map(|&m| p.from_model(m as f64) as f32).collect();
                    ScalarVolume::new(c.grid().clone(), values)
                })
                .collect::<Result<Vec<_>>>()?;
            Volume::from_channels(chans)
        })
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(frames, lr_series.timesteps().to_vec())
}
