//! Cosine noise schedule, forward corruption and deterministic reverse
//! sampling for conditional super-resolution.
//!
//! Sampling runs in model space: normalized values mapped to `[-1, 1]`.
//! Denoisers predict the added noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::volume::{trilinear_upsample, NormalizationParams, ScalarVolume, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub s_offset: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: 1000,
            s_offset: 0.008,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        cosine_schedule(self.timesteps, self.s_offset)
    }
}

/// Precomputed diffusion coefficients for steps `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    s_offset: f64,
    /// `alpha_bars[t]` for `t` in `0..=T`.
    alpha_bars: Vec<f64>,
    /// `betas[t - 1]` is the variance added at step `t`.
    betas: Vec<f64>,
    alphas: Vec<f64>,
}

pub const MAX_BETA: f64 = 0.999;

/// Cosine schedule. Betas come from ratios of the closed-form signal level
/// and are clipped at [`MAX_BETA`]; the stored `alpha_bars` are the running
/// product of `1 - beta`, so they stay consistent with the betas after
/// clipping.
pub fn cosine_schedule(timesteps: usize, s_offset: f64) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(Error::InvalidT(timesteps));
    }
    let f = |t: usize| {
        let x = ((t as f64 / timesteps as f64 + s_offset) / (1.0 + s_offset)) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let closed: Vec<f64> = (0..=timesteps).map(|t| f(t) / f0).collect();
    let betas: Vec<f64> = (1..=timesteps)
        .map(|t| (1.0 - closed[t] / closed[t - 1]).min(MAX_BETA))
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(timesteps + 1);
    alpha_bars.push(1.0);
    for a in &alphas {
        let prev = *alpha_bars.last().expect("non-empty");
        alpha_bars.push(prev * a);
    }
    Ok(NoiseSchedule {
        s_offset,
        alpha_bars,
        betas,
        alphas,
    })
}

impl NoiseSchedule {
    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn s_offset(&self) -> f64 {
        self.s_offset
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.timesteps() {
            return Err(Error::BadTimestep {
                t,
                max: self.timesteps(),
            });
        }
        Ok(())
    }
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`.
pub fn q_sample(x0: &ScalarVolume, t: usize, noise: &ScalarVolume, sched: &NoiseSchedule) -> Result<ScalarVolume> {
    check_same_dims(x0, noise)?;
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0
        .values()
        .iter()
        .zip(noise.values())
        .map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32)
        .collect();
    ScalarVolume::new(x0.grid().clone(), values)
}

/// Clean-signal estimate implied by a noise prediction at step `t`.
pub fn predict_x0(x_t: f64, eps: f64, alpha_bar: f64) -> f64 {
    (x_t - (1.0 - alpha_bar).sqrt() * eps) / alpha_bar.sqrt()
}

pub fn standard_normal<R: Rng + ?Sized>(like: &ScalarVolume, rng: &mut R) -> Result<ScalarVolume> {
    let values = (0..like.values().len())
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    ScalarVolume::new(like.grid().clone(), values)
}

fn check_same_dims(a: &ScalarVolume, b: &ScalarVolume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch {
            expected: a.dims().to_vec(),
            actual: b.dims().to_vec(),
        });
    }
    Ok(())
}

/// What the network output regresses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// The added noise.
    #[default]
    Epsilon,
    /// `v = sqrt(abar) eps - sqrt(1 - abar) x0`.
    Velocity,
}

impl Parameterization {
    /// Regression target for the network output.
    pub fn target(self, x0: f64, eps: f64, alpha_bar: f64) -> f64 {
        match self {
            Parameterization::Epsilon => eps,
            Parameterization::Velocity => alpha_bar.sqrt() * eps - (1.0 - alpha_bar).sqrt() * x0,
        }
    }

    /// `(a, b)` with `x0_hat = a x_t + b out`.
    pub fn x0_coeffs(self, alpha_bar: f64) -> (f64, f64) {
        let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        match self {
            Parameterization::Epsilon => (1.0 / sa, -sb / sa),
            Parameterization::Velocity => (sa, -sb),
        }
    }

    /// `(a, b)` with `eps_hat = a x_t + b out`.
    pub fn eps_coeffs(self, alpha_bar: f64) -> (f64, f64) {
        match self {
            Parameterization::Epsilon => (0.0, 1.0),
            Parameterization::Velocity => ((1.0 - alpha_bar).sqrt(), alpha_bar.sqrt()),
        }
    }
}

/// Presents a network with any output parameterization as a noise predictor.
pub struct ParameterizedPredictor<'a, N: ?Sized> {
    pub net: &'a N,
    pub parameterization: Parameterization,
    pub schedule: &'a NoiseSchedule,
}

impl<N: NoisePredictor + ?Sized> NoisePredictor for ParameterizedPredictor<'_, N> {
    fn predict_noise(&self, x_t: &ScalarVolume, condition: &ScalarVolume, t: usize) -> Result<Vec<f32>> {
        let out = self.net.predict_noise(x_t, condition, t)?;
        let (a, b) = self.parameterization.eps_coeffs(self.schedule.alpha_bar(t));
        Ok(x_t
            .values()
            .iter()
            .zip(&out)
            .map(|(&x, &o)| (a * x as f64 + b * o as f64) as f32)
            .collect())
    }
}

/// A network predicting the noise in `x_t` given the upsampled condition.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &ScalarVolume, condition: &ScalarVolume, t: usize) -> Result<Vec<f32>>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&ScalarVolume, &ScalarVolume, usize) -> Result<Vec<f32>>,
{
    fn predict_noise(&self, x_t: &ScalarVolume, condition: &ScalarVolume, t: usize) -> Result<Vec<f32>> {
        self(x_t, condition, t)
    }
}

/// Noise-prediction MSE at a uniformly drawn step `t` in `1..=T`.
pub fn denoise_loss<D: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    x0: &ScalarVolume,
    condition: &ScalarVolume,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    check_same_dims(x0, condition)?;
    let t = rng.random_range(1..=sched.timesteps());
    let eps = standard_normal(x0, rng)?;
    let x_t = q_sample(x0, t, &eps, sched)?;
    let pred = denoiser.predict_noise(&x_t, condition, t)?;
    if pred.len() != eps.values().len() {
        return Err(Error::DimMismatch {
            expected: vec![eps.values().len()],
            actual: vec![pred.len()],
        });
    }
    Ok(pred
        .iter()
        .zip(eps.values())
        .map(|(&p, &e)| (p as f64 - e as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// LR input and its upsampled, model-space condition at HR dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningInput {
    pub lr_volume: Volume,
    pub condition: Volume,
}

/// Trilinearly upsamples `lr` by `factor`. With `normalization`, one entry
/// per component, the condition is mapped to model space.
pub fn make_condition(
    lr: &Volume,
    factor: usize,
    normalization: Option<&[NormalizationParams]>,
) -> Result<ConditioningInput> {
    let up = trilinear_upsample(lr, factor)?;
    let condition = match normalization {
        None => up,
        Some(params) => {
            if params.len() != up.num_components() {
                return Err(Error::Config(format!(
                    "{} normalization entries for {} components",
                    params.len(),
                    up.num_components()
                )));
            }
            let chans = up
                .channels()
                .into_iter()
                .zip(params)
                .map(|(c, p)| c.map(|v| p.to_model(v as f64) as f32))
                .collect::<Result<Vec<_>>>()?;
            Volume::from_channels(chans)?
        }
    };
    Ok(ConditioningInput {
        lr_volume: lr.clone(),
        condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub inference_steps: usize,
    /// 0 gives the deterministic update.
    pub eta: f64,
    /// Clamp each clean-signal estimate to `[-b, b]`.
    pub clip_denoised: bool,
    /// The bound `b`; `None` means the unit model range.
    pub clip_bound: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            inference_steps: 20,
            eta: 0.0,
            clip_denoised: true,
            clip_bound: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.inference_steps == 0 || self.inference_steps > sched.timesteps() {
            return Err(Error::Config(format!(
                "inference_steps must be in 1..={}, got {}",
                sched.timesteps(),
                self.inference_steps
            )));
        }
        if let Some(b) = self.clip_bound {
            if !(b > 0.0) {
                return Err(Error::Config(format!("clip_bound must be positive, got {b}")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must be in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// Descending, evenly spaced steps `floor(i T / S) + 1` for `i = S-1..0`.
/// The walk never evaluates `t = T`, where the clean estimate divides by
/// `sqrt(abar_T) ~ 3e-5`, and finishes at `t = 1`.
pub fn timestep_sequence(timesteps: usize, steps: usize) -> Vec<usize> {
    (0..steps).rev().map(|i| i * timesteps / steps + 1).collect()
}

/// Samples every component of the condition independently.
pub fn p_sample_loop<D: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    cond: &ConditioningInput,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    rng: &mut R,
) -> Result<Volume> {
    let chans = cond
        .condition
        .channels()
        .into_iter()
        .map(|c| sample_scalar(denoiser, c, sched, sampler, rng))
        .collect::<Result<Vec<_>>>()?;
    Volume::from_channels(chans)
}

/// Reverse process for one scalar condition, starting from standard normal
/// noise. Returns the clean-signal estimate of the final step.
pub fn sample_scalar<D: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    condition: &ScalarVolume,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    rng: &mut R,
) -> Result<ScalarVolume> {
    let init = standard_normal(condition, rng)?;
    sample_from(denoiser, condition, init.values().iter().map(|&v| v as f64).collect(), sched, sampler, rng)
}

/// Reverse process from a given state at step `T`.
pub fn sample_from<D: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    condition: &ScalarVolume,
    mut x: Vec<f64>,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    rng: &mut R,
) -> Result<ScalarVolume> {
    sampler.validate(sched)?;
    let grid = condition.grid().clone();
    let seq = timestep_sequence(sched.timesteps(), sampler.inference_steps);
    let mut x0 = vec![0.0f64; x.len()];
    let bound = sampler.clip_bound.unwrap_or(1.0);
    for (i, &t) in seq.iter().enumerate() {
        let state = ScalarVolume::new(grid.clone(), x.iter().map(|&v| v as f32).collect())?;
        let eps_pred = denoiser.predict_noise(&state, condition, t)?;
        if eps_pred.len() != x.len() {
            return Err(Error::DimMismatch {
                expected: vec![x.len()],
                actual: vec![eps_pred.len()],
            });
        }
        let ab = sched.alpha_bar(t);
        let mut eps: Vec<f64> = eps_pred.iter().map(|&e| e as f64).collect();
        for ((o, &xt), e) in x0.iter_mut().zip(&x).zip(eps.iter_mut()) {
            let mut est = predict_x0(xt, *e, ab);
            if sampler.clip_denoised {
                est = est.clamp(-bound, bound);
                *e = (xt - ab.sqrt() * est) / (1.0 - ab).sqrt();
            }
            *o = est;
        }
        let Some(&t_next) = seq.get(i + 1) else { break };
        let ab_next = sched.alpha_bar(t_next);
        let sigma = sampler.eta * ((1.0 - ab_next) / (1.0 - ab) * (1.0 - ab / ab_next)).sqrt();
        let dir = (1.0 - ab_next - sigma * sigma).max(0.0).sqrt();
        for ((xv, &x0v), &e) in x.iter_mut().zip(&x0).zip(&eps) {
            *xv = ab_next.sqrt() * x0v + dir * e;
            if sigma > 0.0 {
                *xv += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    ScalarVolume::new(grid, x0.iter().map(|&v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(n: usize, rng: &mut ChaCha8Rng) -> ScalarVolume {
        let grid = GridSpec::unit([n, n, n]).unwrap();
        let len = grid.len();
        ScalarVolume::new(grid, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn closed_form_alpha_bar(t: f64, big_t: f64, s: f64) -> f64 {
        let f = |t: f64| (((t / big_t + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        f(t) / f(0.0)
    }

    #[test]
    fn schedule_invariants() {
        let s = cosine_schedule(1000, 0.008).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(1000) < 1e-3);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas().iter().all(|&b| b > 0.0 && b <= MAX_BETA));
        let mut prod = 1.0;
        for t in 1..=1000 {
            prod *= 1.0 - s.betas()[t - 1];
            assert!((s.alpha_bar(t) - prod).abs() < 1e-10);
        }
    }

    #[test]
    fn schedule_tracks_closed_form() {
        let s = cosine_schedule(1000, 0.008).unwrap();
        for t in 0..1000 {
            let c = closed_form_alpha_bar(t as f64, 1000.0, 0.008);
            assert!((s.alpha_bar(t) - c).abs() < 1e-12, "t={t}");
        }
        // Only the final beta is clipped, which lifts abar_T from ~1e-33 to ~1e-9.
        let c = closed_form_alpha_bar(1000.0, 1000.0, 0.008);
        assert!(c < 1e-30);
        assert!((s.alpha_bar(1000) - c).abs() < 1e-8);
        assert_eq!(s.betas()[999], MAX_BETA);
        assert!(s.betas()[998] < MAX_BETA);
        assert!(matches!(cosine_schedule(0, 0.008), Err(Error::InvalidT(0))));
    }

    #[test]
    fn q_sample_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = cosine_schedule(1000, 0.008).unwrap();
        let x0 = random_volume(8, &mut rng);
        let noise = random_volume(8, &mut rng);
        assert_eq!(q_sample(&x0, 0, &noise, &s).unwrap(), x0);
        let zero = ScalarVolume::constant(x0.grid().clone(), 0.0).unwrap();
        let t = 300;
        let xt = q_sample(&x0, t, &zero, &s).unwrap();
        let a = s.alpha_bar(t).sqrt();
        for (o, &x) in xt.values().iter().zip(x0.values()) {
            assert!((*o as f64 - a * x as f64).abs() < 1e-6);
        }
        let xt = q_sample(&zero, 1000, &noise, &s).unwrap();
        for (o, &e) in xt.values().iter().zip(noise.values()) {
            assert!((o - e).abs() <= 1e-3 * e.abs() + 1e-7);
        }
        assert!(matches!(q_sample(&x0, 1001, &noise, &s), Err(Error::BadTimestep { .. })));
        let other = random_volume(4, &mut rng);
        assert!(matches!(q_sample(&x0, 1, &other, &s), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn q_sample_preserves_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = cosine_schedule(1000, 0.008).unwrap();
        let grid = GridSpec::unit([32, 32, 32]).unwrap();
        let x0 = standard_normal(&ScalarVolume::constant(grid, 0.0).unwrap(), &mut rng).unwrap();
        for t in [1, 100, 500, 900, 1000] {
            let eps = standard_normal(&x0, &mut rng).unwrap();
            let xt = q_sample(&x0, t, &eps, &s).unwrap();
            let n = xt.values().len() as f64;
            let mean = xt.values().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = xt.values().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let vx0 = x0.values().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
            let expected = s.alpha_bar(t) * vx0 + 1.0 - s.alpha_bar(t);
            assert!((var - expected).abs() < 0.05 * expected, "t={t}: {var} vs {expected}");
        }
    }

    /// Predicts the exact noise that maps `x0` to the given state.
    fn oracle(x0: ScalarVolume, sched: NoiseSchedule) -> impl Fn(&ScalarVolume, &ScalarVolume, usize) -> Result<Vec<f32>> {
        move |xt: &ScalarVolume, _: &ScalarVolume, t: usize| {
            let ab = sched.alpha_bar(t);
            Ok(xt
                .values()
                .iter()
                .zip(x0.values())
                .map(|(&x, &c)| ((x as f64 - ab.sqrt() * c as f64) / (1.0 - ab).sqrt()) as f32)
                .collect())
        }
    }

    fn mse(a: &ScalarVolume, b: &ScalarVolume) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            / a.values().len() as f64
    }

    #[test]
    fn oracle_denoiser_recovers_x0() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = cosine_schedule(1000, 0.008).unwrap();
        let x0 = random_volume(16, &mut rng);
        let den = oracle(x0.clone(), s.clone());
        for steps in [1000, 20] {
            let cfg = SamplerConfig {
                inference_steps: steps,
                ..Default::default()
            };
            let out = sample_scalar(&den, &x0, &s, &cfg, &mut rng).unwrap();
            assert!(mse(&out, &x0) < 1e-6, "steps={steps}");
        }
    }

    #[test]
    fn single_step_returns_first_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = cosine_schedule(1000, 0.008).unwrap();
        let cond = random_volume(8, &mut rng);
        let den = |xt: &ScalarVolume, _: &ScalarVolume, _t: usize| Ok(xt.values().iter().map(|v| 0.5 * v).collect());
        let cfg = SamplerConfig {
            inference_steps: 1,
            clip_denoised: false,
            ..Default::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let out = sample_scalar(&den, &cond, &s, &cfg, &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let init = standard_normal(&cond, &mut r2).unwrap();
        let ab = s.alpha_bar(1);
        for (o, &x) in out.values().iter().zip(init.values()) {
            let e = (0.5 * x) as f64;
            let expected = predict_x0(x as f64, e, ab) as f32;
            assert_eq!(*o, expected);
        }
        assert_eq!(timestep_sequence(1000, 1), vec![1]);
        assert_eq!(timestep_sequence(1000, 20)[..3], [951, 901, 851]);
        assert_eq!(*timestep_sequence(1000, 20).last().unwrap(), 1);
        assert_eq!(timestep_sequence(1000, 1000), (1..=1000).rev().collect::<Vec<_>>());
    }

    #[test]
    fn parameterizations_agree_on_exact_outputs() {
        let s = cosine_schedule(1000, 0.008).unwrap();
        for t in [1, 300, 951] {
            let ab = s.alpha_bar(t);
            let (x0, eps) = (0.375, -1.25);
            let xt = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps;
            for p in [Parameterization::Epsilon, Parameterization::Velocity] {
                let out = p.target(x0, eps, ab);
                let (a, b) = p.x0_coeffs(ab);
                assert!((a * xt + b * out - x0).abs() < 1e-9, "{p:?} t={t}");
                let (a, b) = p.eps_coeffs(ab);
                assert!((a * xt + b * out - eps).abs() < 1e-9, "{p:?} t={t}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = cosine_schedule(1000, 0.008).unwrap();
        let cond = random_volume(8, &mut rng);
        let den = |xt: &ScalarVolume, c: &ScalarVolume, t: usize| {
            Ok(xt
                .values()
                .iter()
                .zip(c.values())
                .map(|(a, b)| (a - b) * (t as f32 / 1000.0))
                .collect())
        };
        let input = make_condition(&Volume::Scalar(cond.clone()), 2, None).unwrap();
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            p_sample_loop(&den, &input, &s, &SamplerConfig::default(), &mut r).unwrap()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn denoise_loss_with_stub_denoisers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = cosine_schedule(1000, 0.008).unwrap();
        let x0 = random_volume(32, &mut rng);
        let zero = |xt: &ScalarVolume, _: &ScalarVolume, _: usize| Ok(vec![0.0; xt.values().len()]);
        let l = denoise_loss(&zero, &x0, &x0, &s, &mut rng).unwrap();
        assert!((l - 1.0).abs() < 0.03, "{l}");
        let exact = oracle(x0.clone(), s.clone());
        let l = denoise_loss(&exact, &x0, &x0, &s, &mut rng).unwrap();
        assert!(l < 1e-6, "{l}");
    }

    #[test]
    fn condition_is_the_trilinear_upsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lr = Volume::Scalar(random_volume(8, &mut rng));
        let c = make_condition(&lr, 4, None).unwrap();
        assert_eq!(c.condition.grid().dims, [32, 32, 32]);
        assert_eq!(c.condition, trilinear_upsample(&lr, 4).unwrap());
        let constant = Volume::Scalar(ScalarVolume::constant(GridSpec::unit([8, 8, 8]).unwrap(), 2.5).unwrap());
        let p = NormalizationParams::new(0.0, 5.0).unwrap();
        let c = make_condition(&constant, 4, Some(&[p])).unwrap();
        let Volume::Scalar(v) = &c.condition else { panic!() };
        assert!(v.values().iter().all(|&x| x == 0.0));
    }
}
