use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{derive_seed, split_dataset, Checkpoint, DiffusionTarget, LossRecord, Phase, Stage, TrainConfig, TrainLog};
use crate::autograd::{clip_grad_norm, Adam, AdamState, Graph, ParamGrads, Tensor};
use crate::denoiser::SwinUNet;
use crate::diffusion::{make_condition, NoiseSchedule};
use crate::encoder::{cld_loss_with_grad, regularizer_on_tape, ContrastiveEncoder};
use crate::error::{Error, Result};
use crate::volume::{trilinear_downsample, NormalizationParams, TimeSeries, Volume};

/// Stage-A negatives are one-step estimates from steps in the lower part of
/// the schedule, where the estimate still resembles a volume.
const SR_NEGATIVE_T_FRACTION: f64 = 0.5;

/// One scalar training pair in model space.
#[derive(Debug, Clone)]
pub(crate) struct Sample {
    pub dims: [usize; 3],
    pub hr: Vec<f32>,
    pub cond: Vec<f32>,
    pub map: TargetMap,
}

/// Model-space volume to diffusion target and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TargetMap {
    pub kind: DiffusionTarget,
    pub scale: f64,
}

impl TargetMap {
    pub fn new(cfg: &TrainConfig, fitted_scale: Option<f64>) -> Self {
        TargetMap {
            kind: cfg.target,
            scale: cfg.residual_scale.or(fitted_scale).unwrap_or(1.0),
        }
    }

    pub fn to_target(&self, hr: &[f32], cond: &[f32]) -> Vec<f32> {
        match self.kind {
            DiffusionTarget::Image => hr.to_vec(),
            DiffusionTarget::Residual => hr
                .iter()
                .zip(cond)
                .map(|(&h, &c)| ((h as f64 - c as f64) * self.scale) as f32)
                .collect(),
        }
    }

    pub fn from_target(&self, x0: &[f32], cond: &[f32]) -> Vec<f32> {
        match self.kind {
            DiffusionTarget::Image => x0.to_vec(),
            DiffusionTarget::Residual => x0
                .iter()
                .zip(cond)
                .map(|(&r, &c)| (c as f64 + r as f64 / self.scale) as f32)
                .collect(),
        }
    }

    /// Largest magnitude a clean target can take; model-space volumes lie
    /// in `[-1, 1]`.
    pub fn bound(&self) -> f64 {
        match self.kind {
            DiffusionTarget::Image => 1.0,
            DiffusionTarget::Residual => 2.0 * self.scale,
        }
    }
}

/// Fits the residual scale on `samples` and assigns the resulting map to
/// each. Returns the scale in use.
pub(crate) fn assign_target_map(samples: &mut [Sample], cfg: &TrainConfig) -> f64 {
    let map = TargetMap::new(cfg, Some(fit_residual_scale(samples)));
    for s in samples.iter_mut() {
        s.map = map;
    }
    map.scale
}

/// Scale giving the residual between HR and condition unit RMS.
pub(crate) fn fit_residual_scale(samples: &[Sample]) -> f64 {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for s in samples {
        sum += s.hr.iter().zip(&s.cond).map(|(&h, &c)| (h as f64 - c as f64).powi(2)).sum::<f64>();
        n += s.hr.len();
    }
    let rms = (sum / n.max(1) as f64).sqrt();
    if rms > 1e-12 {
        1.0 / rms
    } else {
        1.0
    }
}

/// Freshly initialized networks, tagged [`Phase::Initialized`].
pub fn initial_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let encoder = ContrastiveEncoder::new(cfg.encoder.clone(), derive_seed(cfg.seed, "encoder-init"))?;
    let denoiser = SwinUNet::new(cfg.denoiser_config(), derive_seed(cfg.seed, "denoiser-init"))?;
    Ok(Checkpoint {
        phase: Phase::Initialized,
        config: cfg.clone(),
        normalization: Vec::new(),
        residual_scale: None,
        encoder_opt: AdamState::new(encoder.params()),
        denoiser_opt: AdamState::new(denoiser.params()),
        encoder,
        denoiser,
    })
}

/// Per-component value ranges over `frames`, widened by `margin` of the
/// range on each side.
pub(crate) fn fit_normalization<'a>(
    frames: impl Iterator<Item = &'a Volume> + Clone,
    components: usize,
    margin: f64,
) -> Result<Vec<NormalizationParams>> {
    (0..components)
        .map(|c| {
            let p = NormalizationParams::fit(frames.clone().flat_map(move |f| f.channels()[c].values().iter()))?;
            let pad = p.range() * margin;
            NormalizationParams::new(p.min_value - pad, p.max_value + pad)
        })
        .collect()
}

/// Model-space pairs for every component of an HR frame and its LR frame.
pub(crate) fn samples_from_pair(
    hr: &Volume,
    lr: &Volume,
    norm: &[NormalizationParams],
    factor: usize,
) -> Result<Vec<Sample>> {
    let cond = make_condition(lr, factor, Some(norm))?.condition;
    if cond.grid().dims != hr.grid().dims || cond.num_components() != hr.num_components() {
        return Err(Error::ShapeIncompatible(format!(
            "LR frame upsampled by {factor} gives {:?}, HR frame is {:?}",
            cond.grid().dims,
            hr.grid().dims
        )));
    }
    Ok(hr
        .channels()
        .into_iter()
        .zip(cond.channels())
        .zip(norm)
        .map(|((h, c), p)| Sample {
            // identity until the caller assigns the fitted map
            map: TargetMap {
                kind: DiffusionTarget::Image,
                scale: 1.0,
            },
            dims: h.dims(),
            hr: h.values().iter().map(|&v| p.to_model(v as f64) as f32).collect(),
            cond: c.values().to_vec(),
        })
        .collect())
}

/// Checks that both networks accept volumes of `dims` and that LR dims
/// follow from the scale factor.
pub(crate) fn check_network_dims(cfg: &TrainConfig, dims: [usize; 3]) -> Result<()> {
    let incompatible = |e: Error| Error::ShapeIncompatible(format!("HR dims {dims:?}: {e}"));
    if dims.iter().any(|&d| d % cfg.scale_factor != 0) {
        return Err(incompatible(Error::NonDivisibleDims {
            dims,
            divisor: cfg.scale_factor,
        }));
    }
    let s = cfg.encoder.stride();
    if dims.iter().any(|&d| d % s != 0) {
        return Err(incompatible(Error::NonDivisibleDims { dims, divisor: s }));
    }
    cfg.denoiser_config().stage_grids(dims).map_err(incompatible)?;
    Ok(())
}

struct Parts {
    total: f64,
    denoise: f64,
    reconstruction: f64,
    regularizer: f64,
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

fn noisy(target: &[f32], eps: &[f32], ab: f64) -> Vec<f32> {
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    target
        .iter()
        .zip(eps)
        .map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32)
        .collect()
}

fn column(data: &[f32]) -> Tensor<f32> {
    Tensor::new(data.len(), 1, data.to_vec())
}

/// Denoiser update on one sample: output-regression MSE plus the weighted
/// reconstruction objective on the one-step clean estimate. Gradients of the
/// denoiser are added to `grads`; the encoder is bound frozen.
#[allow(clippy::too_many_arguments)]
fn denoiser_step(
    ckpt: &Checkpoint,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    sample: &Sample,
    use_regularizer: bool,
    rng: &mut ChaCha8Rng,
    grads: &mut ParamGrads,
    scale: f64,
) -> Result<Parts> {
    let n = sample.hr.len();
    let t = rng.random_range(1..=sched.timesteps());
    let ab = sched.alpha_bar(t);
    let eps = normal_vec(n, rng);
    let target = sample.map.to_target(&sample.hr, &sample.cond);
    let x_t = noisy(&target, &eps, ab);
    let out_target: Vec<f32> = target
        .iter()
        .zip(&eps)
        .map(|(&x, &e)| cfg.prediction.target(x as f64, e as f64, ab) as f32)
        .collect();

    let mut g = Graph::<f32>::new();
    let pd = ckpt.denoiser.params().bind(&mut g, true);
    let input = g.constant(SwinUNet::stack_input(&x_t, &sample.cond));
    let out = ckpt.denoiser.forward(&mut g, &pd, input, sample.dims, t)?;
    let out_c = g.constant(column(&out_target));
    let denoise = g.mean_sq_diff(out, out_c);
    let mut terms = vec![(denoise, 1.0f32)];
    let (mut rec_v, mut reg_v) = (None, None);
    if cfg.lambda_obj > 0.0 {
        let xt_c = g.constant(column(&x_t));
        let (a, b) = cfg.prediction.x0_coeffs(ab);
        let x0 = g.lin_comb(&[(xt_c, a as f32), (out, b as f32)]);
        let bound = sample.map.bound() as f32;
        let x0 = g.clamp(x0, -bound, bound);
        let cond_c = g.constant(column(&sample.cond));
        let anchor = match sample.map.kind {
            DiffusionTarget::Image => x0,
            DiffusionTarget::Residual => g.lin_comb(&[(cond_c, 1.0), (x0, (1.0 / sample.map.scale) as f32)]),
        };
        let hr_c = g.constant(column(&sample.hr));
        let rec = g.mean_abs_diff(anchor, hr_c);
        terms.push((rec, cfg.lambda_obj as f32));
        rec_v = Some(rec);
        if use_regularizer {
            let pe = ckpt.encoder.params().bind(&mut g, false);
            let contrast = cfg.contrastive();
            let fa = ckpt.encoder.forward(&mut g, &pe, anchor, sample.dims)?;
            let fp = ckpt.encoder.forward(&mut g, &pe, hr_c, sample.dims)?;
            let fneg = ckpt.encoder.forward(&mut g, &pe, cond_c, sample.dims)?;
            let (fa, fp, fneg) = (
                ckpt.encoder.feature_vars(&fa),
                ckpt.encoder.feature_vars(&fp),
                ckpt.encoder.feature_vars(&fneg),
            );
            let w = contrast.weights(fa.len())?;
            let reg = regularizer_on_tape(&mut g, &fa, &fp, &fneg, &w, contrast.epsilon);
            terms.push((reg, (cfg.lambda_obj * contrast.beta) as f32));
            reg_v = Some(reg);
        }
    }
    let total = g.lin_comb(&terms);
    let back = g.backward(total);
    grads.accumulate(&pd, &back, scale);
    let val = |v: Option<_>| v.map(|v| g.scalar(v) as f64).unwrap_or(0.0);
    Ok(Parts {
        total: g.scalar(total) as f64,
        denoise: g.scalar(denoise) as f64,
        reconstruction: val(rec_v),
        regularizer: val(reg_v),
    })
}

/// Model-space one-step clean estimate of `sample` at a random step.
fn one_step_estimate(
    ckpt: &Checkpoint,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    sample: &Sample,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    let t_max = ((sched.timesteps() as f64 * SR_NEGATIVE_T_FRACTION) as usize).max(1);
    let t = rng.random_range(1..=t_max);
    let ab = sched.alpha_bar(t);
    let target = sample.map.to_target(&sample.hr, &sample.cond);
    let eps = normal_vec(target.len(), rng);
    let x_t = noisy(&target, &eps, ab);
    let bound = sample.map.bound();
    let mut g = Graph::<f32>::new();
    let pd = ckpt.denoiser.params().bind(&mut g, false);
    let input = g.constant(SwinUNet::stack_input(&x_t, &sample.cond));
    let out = ckpt.denoiser.forward(&mut g, &pd, input, sample.dims, t)?;
    let (a, b) = cfg.prediction.x0_coeffs(ab);
    let x0: Vec<f32> = x_t
        .iter()
        .zip(&g.value(out).data)
        .map(|(&x, &o)| (a * x as f64 + b * o as f64).clamp(-bound, bound) as f32)
        .collect();
    Ok(sample.map.from_target(&x0, &sample.cond))
}

/// Encoder update: batch HR volumes against the current SR negatives.
fn encoder_step(
    ckpt: &Checkpoint,
    hr: &[&Sample],
    sr: &[(Vec<f32>, [usize; 3])],
    grads: &mut ParamGrads,
) -> Result<f64> {
    let mut g = Graph::<f32>::new();
    let pe = ckpt.encoder.params().bind(&mut g, true);
    let energy = |g: &mut Graph<f32>, data: &[f32], dims: [usize; 3]| -> Result<_> {
        let x = g.constant(column(data));
        let tape = ckpt.encoder.forward(g, &pe, x, dims)?;
        Ok(ckpt.encoder.energy_var(g, &pe, &tape))
    };
    let hv = hr.iter().map(|s| energy(&mut g, &s.hr, s.dims)).collect::<Result<Vec<_>>>()?;
    let sv = sr.iter().map(|(d, dims)| energy(&mut g, d, *dims)).collect::<Result<Vec<_>>>()?;
    let he: Vec<f64> = hv.iter().map(|&v| g.scalar(v) as f64).collect();
    let se: Vec<f64> = sv.iter().map(|&v| g.scalar(v) as f64).collect();
    let (loss, dh, ds) = cld_loss_with_grad(&he, &se)?;
    // surrogate whose gradient equals the analytic loss gradient
    let terms: Vec<_> = hv
        .iter()
        .zip(&dh)
        .chain(sv.iter().zip(&ds))
        .map(|(&v, &d)| (v, d as f32))
        .collect();
    let surrogate = g.lin_comb(&terms);
    let back = g.backward(surrogate);
    grads.accumulate(&pe, &back, 1.0);
    Ok(loss)
}

fn check_finite(values: &[f64], grads: &ParamGrads, iteration: usize, stage: Stage) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) || !grads.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            stage: format!("{stage:?}"),
        });
    }
    Ok(())
}

/// Random axis permutation (cubic volumes only), per-axis flips and a
/// signed intensity scale in `[0.5, 1]`. Trilinear degradation commutes with
/// all of them, so the pair stays consistent.
fn augment(sample: &Sample, rng: &mut ChaCha8Rng) -> Sample {
    let d = sample.dims;
    let mut perm = [0usize, 1, 2];
    if d[0] == d[1] && d[1] == d[2] {
        perm.shuffle(rng);
    }
    let flip: [bool; 3] = std::array::from_fn(|_| rng.random_bool(0.5));
    let alpha = rng.random_range(0.5..=1.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
    let nd: [usize; 3] = std::array::from_fn(|k| d[perm[k]]);
    let mut index = Vec::with_capacity(sample.hr.len());
    for z in 0..nd[2] {
        for y in 0..nd[1] {
            for x in 0..nd[0] {
                let o = [x, y, z];
                let mut src = [0usize; 3];
                for k in 0..3 {
                    src[perm[k]] = if flip[k] { nd[k] - 1 - o[k] } else { o[k] };
                }
                index.push(src[0] + d[0] * (src[1] + d[1] * src[2]));
            }
        }
    }
    let remap = |v: &[f32]| index.iter().map(|&i| (v[i] as f64 * alpha) as f32).collect();
    Sample {
        dims: nd,
        hr: remap(&sample.hr),
        cond: remap(&sample.cond),
        map: sample.map,
    }
}

fn pick<'a>(samples: &'a [Sample], count: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Sample> {
    (0..count).map(|_| &samples[rng.random_range(0..samples.len())]).collect()
}

/// Runs `iterations` denoiser updates over `samples`; shared by stage B and
/// fine-tuning.
#[allow(clippy::too_many_arguments)]
fn denoiser_iteration(
    ckpt: &mut Checkpoint,
    opt: &mut Adam,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    samples: &[Sample],
    rng: &mut ChaCha8Rng,
    iteration: usize,
    stage: Stage,
) -> Result<LossRecord> {
    let mut grads = ParamGrads::zeros_like(ckpt.denoiser.params());
    let batch: Vec<std::borrow::Cow<Sample>> = pick(samples, cfg.batch_size, rng)
        .into_iter()
        .map(|s| {
            if cfg.augment {
                std::borrow::Cow::Owned(augment(s, rng))
            } else {
                std::borrow::Cow::Borrowed(s)
            }
        })
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let use_reg = !cfg.ablation.no_contrastive;
    let mut rec = LossRecord {
        iteration,
        stage,
        total: 0.0,
        denoise: 0.0,
        reconstruction: 0.0,
        regularizer: 0.0,
        cld: 0.0,
    };
    for s in &batch {
        let p = denoiser_step(ckpt, cfg, sched, s, use_reg, rng, &mut grads, scale)?;
        rec.total += p.total * scale;
        rec.denoise += p.denoise * scale;
        rec.reconstruction += p.reconstruction * scale;
        rec.regularizer += p.regularizer * scale;
    }
    check_finite(&[rec.total], &grads, iteration, stage)?;
    clip_grad_norm(&mut grads, cfg.grad_clip);
    opt.step(ckpt.denoiser.params_mut(), &grads);
    Ok(rec)
}

/// Alternating pretraining over the train split of `dataset`. Each series
/// is normalized with its own range; LR inputs are produced by trilinear
/// downsampling.
pub fn pretrain(dataset: &[TimeSeries], cfg: &TrainConfig) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    let first = dataset.first().ok_or(Error::EmptySeries)?;
    let dims = first.grid().dims;
    for s in dataset {
        if s.grid().dims != dims {
            return Err(Error::ShapeIncompatible(format!(
                "series dims {:?} differ from {:?}",
                s.grid().dims,
                dims
            )));
        }
    }
    check_network_dims(cfg, dims)?;
    let (train, _test) = split_dataset(dataset, cfg)?;
    let norms = dataset
        .iter()
        .map(|s| fit_normalization(s.frames().iter(), s.num_components(), cfg.normalization_margin))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    let (mut log_scale, mut used) = (0.0, 0usize);
    for (si, series) in dataset.iter().enumerate() {
        let mut own = Vec::new();
        for f in train.iter().filter(|f| f.series == si) {
            let hr = &series.frames()[f.position];
            let lr = trilinear_downsample(hr, cfg.scale_factor)?;
            own.extend(samples_from_pair(hr, &lr, &norms[si], cfg.scale_factor)?);
        }
        if !own.is_empty() {
            log_scale += assign_target_map(&mut own, cfg).ln();
            used += 1;
        }
        samples.extend(own);
    }

    let sched = cfg.schedule.build()?;
    let mut ckpt = initial_checkpoint(cfg)?;
    let mut opt_e = Adam::new(cfg.adam(), ckpt.encoder.params());
    let mut opt_d = Adam::new(cfg.adam(), ckpt.denoiser.params());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pretrain"));
    let mut log = TrainLog::default();
    let mut negatives: Vec<(Vec<f32>, [usize; 3])> = Vec::new();
    let mut last_stage = None;
    for it in 0..cfg.pretrain_iterations {
        let stage = if (it / cfg.stage_alternation) % 2 == 1 { Stage::B } else { Stage::A };
        // without the contrastive module its slots are dropped, keeping the
        // denoiser's update count unchanged
        if stage == Stage::A && cfg.ablation.no_contrastive {
            continue;
        }
        let rec = match stage {
            Stage::A => {
                if last_stage != Some(Stage::A) {
                    negatives = pick(&samples, cfg.batch_size, &mut rng)
                        .into_iter()
                        .map(|s| Ok((one_step_estimate(&ckpt, cfg, &sched, s, &mut rng)?, s.dims)))
                        .collect::<Result<_>>()?;
                }
                let hr = pick(&samples, cfg.batch_size, &mut rng);
                let mut grads = ParamGrads::zeros_like(ckpt.encoder.params());
                let cld = encoder_step(&ckpt, &hr, &negatives, &mut grads)?;
                check_finite(&[cld], &grads, it, stage)?;
                clip_grad_norm(&mut grads, cfg.grad_clip);
                opt_e.step(ckpt.encoder.params_mut(), &grads);
                LossRecord {
                    iteration: it,
                    stage,
                    total: cld,
                    denoise: 0.0,
                    reconstruction: 0.0,
                    regularizer: 0.0,
                    cld,
                }
            }
            _ => denoiser_iteration(&mut ckpt, &mut opt_d, cfg, &sched, &samples, &mut rng, it, stage)?,
        };
        log.records.push(rec);
        last_stage = Some(stage);
    }
    ckpt.phase = Phase::Pretrained;
    ckpt.residual_scale = Some((log_scale / used as f64).exp());
    ckpt.encoder_opt = opt_e.state;
    ckpt.denoiser_opt = opt_d.state;
    Ok((ckpt, log))
}

/// Adapts the denoiser to one HR frame and its LR counterpart at
/// `hr_timestep`; the encoder stays frozen. Architecture settings come from
/// the checkpoint, training settings from `cfg`.
pub fn finetune(
    ckpt: &Checkpoint,
    hr_frame: &Volume,
    hr_timestep: i64,
    lr_series: &TimeSeries,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    let allowed = ckpt.phase == Phase::Pretrained || (ckpt.phase == Phase::Initialized && cfg.ablation.no_pretrain);
    if !allowed {
        return Err(Error::WrongPhase {
            expected: Phase::Pretrained.name().into(),
            actual: ckpt.phase.name().into(),
        });
    }
    let cfg = TrainConfig {
        encoder: ckpt.config.encoder.clone(),
        denoiser: ckpt.config.denoiser.clone(),
        schedule: ckpt.config.schedule,
        target: ckpt.config.target,
        residual_scale: ckpt.config.residual_scale,
        prediction: ckpt.config.prediction,
        scale_factor: ckpt.config.scale_factor,
        ablation: crate::trainer::AblationFlags {
            no_local_attention: ckpt.config.ablation.no_local_attention,
            ..cfg.ablation
        },
        ..cfg.clone()
    };
    cfg.validate()?;
    let lr_frame = lr_series.frame_at(hr_timestep).ok_or(Error::IndexMismatch(hr_timestep))?;
    check_network_dims(&cfg, hr_frame.grid().dims)?;
    if lr_frame.num_components() != hr_frame.num_components() {
        return Err(Error::ShapeIncompatible("HR and LR component counts differ".into()));
    }
    let norm = fit_normalization(
        std::iter::once(hr_frame).chain(lr_series.frames().iter()),
        hr_frame.num_components(),
        cfg.normalization_margin,
    )?;
    let mut samples = samples_from_pair(hr_frame, lr_frame, &norm, cfg.scale_factor)?;
    let residual_scale = assign_target_map(&mut samples, &cfg);

    let sched = cfg.schedule.build()?;
    let mut out = ckpt.clone();
    out.config = cfg.clone();
    out.normalization = norm;
    out.residual_scale = Some(residual_scale);
    let mut opt = Adam::new(cfg.adam(), out.denoiser.params());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "finetune"));
    let mut log = TrainLog::default();
    for it in 0..cfg.finetune_iterations {
        let rec = denoiser_iteration(&mut out, &mut opt, &cfg, &sched, &samples, &mut rng, it, Stage::F)?;
        log.records.push(rec);
    }
    out.phase = Phase::Finetuned;
    out.denoiser_opt = opt.state;
    Ok((out, log))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::denoiser::SwinUNetConfig;
    use crate::encoder::EncoderConfig;
    use crate::volume::{make_synthetic, GridSpec, SyntheticKind};

    pub(crate) fn toy_config() -> TrainConfig {
        TrainConfig {
            stage_alternation: 3,
            pretrain_iterations: 8,
            finetune_iterations: 3,
            batch_size: 1,
            encoder: EncoderConfig {
                base_channels: 4,
                num_downsamples: 2,
                feature_levels: vec![1, 2],
            },
            denoiser: SwinUNetConfig {
                stages: 2,
                heads_per_stage: vec![1, 2],
                embed_dim: 8,
                timestep_embed_dim: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn blobs(n: usize, frames: usize, seed: u64) -> TimeSeries {
        let t: Vec<i64> = (0..frames as i64).collect();
        make_synthetic(&SyntheticKind::GaussianBlobs(Default::default()), &GridSpec::unit([n; 3]).unwrap(), &t, seed)
            .unwrap()
    }

    #[test]
    fn target_round_trip_and_fitted_scale() {
        let hr = vec![0.5f32, -0.25, 0.125, 0.0];
        let cond = vec![0.25f32, 0.0, 0.375, 0.25];
        let map = TargetMap { kind: DiffusionTarget::Residual, scale: 4.0 };
        let r = map.to_target(&hr, &cond);
        assert_eq!(r, vec![1.0, -1.0, -1.0, -1.0]);
        assert_eq!(map.from_target(&r, &cond), hr);
        let img = TargetMap { kind: DiffusionTarget::Image, scale: 4.0 };
        assert_eq!(img.to_target(&hr, &cond), hr);
        let mut samples = vec![Sample { dims: [4, 1, 1], hr, cond, map: img }];
        let cfg = TrainConfig { residual_scale: None, ..toy_config() };
        assert_eq!(assign_target_map(&mut samples, &cfg), 4.0);
        assert_eq!(samples[0].map, map);
        let fixed = TrainConfig { residual_scale: Some(2.0), ..cfg };
        assert_eq!(assign_target_map(&mut samples, &fixed), 2.0);
    }

    #[test]
    fn pretrain_logs_alternate_and_respect_freezes() {
        let cfg = toy_config();
        let data = vec![blobs(16, 3, 1)];
        let init = initial_checkpoint(&cfg).unwrap();
        let (ckpt, log) = pretrain(&data, &cfg).unwrap();
        assert_eq!(ckpt.phase, Phase::Pretrained);
        let stages: Vec<Stage> = log.records.iter().map(|r| r.stage).collect();
        use Stage::*;
        assert_eq!(stages, vec![A, A, A, B, B, B, A, A]);
        assert!(log.records.iter().all(|r| r.total.is_finite()));
        assert_ne!(ckpt.encoder.params(), init.encoder.params());
        assert_ne!(ckpt.denoiser.params(), init.denoiser.params());
        assert_eq!(log.to_csv().lines().count(), 9);
    }

    #[test]
    fn finetune_phase_and_index_errors() {
        let cfg = toy_config();
        let hr = blobs(16, 2, 2);
        let lr = hr.map_frames(|f| trilinear_downsample(f, 4)).unwrap();
        let init = initial_checkpoint(&cfg).unwrap();
        assert!(matches!(
            finetune(&init, &hr.frames()[0], 0, &lr, &cfg),
            Err(Error::WrongPhase { .. })
        ));
        let no_pre = TrainConfig {
            ablation: crate::trainer::AblationFlags { no_pretrain: true, ..Default::default() },
            ..cfg.clone()
        };
        let (ft, log) = finetune(&init, &hr.frames()[0], 0, &lr, &no_pre).unwrap();
        assert_eq!(ft.phase, Phase::Finetuned);
        assert_eq!(log.records.len(), 3);
        assert_eq!(ft.encoder.params(), init.encoder.params());
        assert!(matches!(finetune(&ft, &hr.frames()[0], 0, &lr, &cfg), Err(Error::WrongPhase { .. })));
        assert!(matches!(
            finetune(&init, &hr.frames()[0], 7, &lr, &no_pre),
            Err(Error::IndexMismatch(7))
        ));
        let zero = TrainConfig { finetune_iterations: 0, ..no_pre };
        let (same, _) = finetune(&init, &hr.frames()[0], 1, &lr, &zero).unwrap();
        assert_eq!(same.denoiser.params(), init.denoiser.params());
    }

    #[test]
    fn stages_update_only_their_network() {
        let data = vec![blobs(16, 3, 1)];
        let init = initial_checkpoint(&toy_config()).unwrap();
        let only_a = TrainConfig { pretrain_iterations: 3, ..toy_config() };
        let (a, _) = pretrain(&data, &only_a).unwrap();
        assert_ne!(a.encoder.params(), init.encoder.params());
        assert_eq!(a.denoiser.params(), init.denoiser.params());
        let no_con = TrainConfig {
            ablation: crate::trainer::AblationFlags { no_contrastive: true, ..Default::default() },
            ..only_a
        };
        let (same, log) = pretrain(&data, &no_con).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(same.denoiser.params(), init.denoiser.params());
        let no_con = TrainConfig { pretrain_iterations: 8, ..no_con };
        let (b, log) = pretrain(&data, &no_con).unwrap();
        let its: Vec<usize> = log.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![3, 4, 5]);
        assert!(log.records.iter().all(|r| r.stage == Stage::B && r.regularizer == 0.0));
        assert_eq!(b.encoder.params(), init.encoder.params());
        assert_ne!(b.denoiser.params(), init.denoiser.params());
    }

    #[test]
    fn non_finite_weights_abort_training() {
        let cfg = TrainConfig {
            ablation: crate::trainer::AblationFlags { no_pretrain: true, ..Default::default() },
            ..toy_config()
        };
        let hr = blobs(16, 1, 4);
        let lr = hr.map_frames(|f| trilinear_downsample(f, 4)).unwrap();
        let mut ckpt = initial_checkpoint(&cfg).unwrap();
        let id = ckpt.denoiser.params().ids().next().unwrap();
        ckpt.denoiser.params_mut().get_mut(id).data[0] = f32::NAN;
        assert!(matches!(
            finetune(&ckpt, &hr.frames()[0], 0, &lr, &cfg),
            Err(Error::NonFiniteLoss { iteration: 0, .. })
        ));
    }

    #[test]
    fn augmentation_is_a_consistent_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4 * 4 * 4;
        let hr: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let cond: Vec<f32> = (0..n).map(|i| (i * 7 % 13) as f32).collect();
        let s = Sample { dims: [4; 3], hr, cond, map: TargetMap { kind: DiffusionTarget::Residual, scale: 1.0 } };
        for _ in 0..10 {
            let a = augment(&s, &mut rng);
            let alpha = a.hr.iter().map(|v| v.abs()).fold(0.0f32, f32::max) / (n - 1) as f32;
            assert!((0.5..=1.0).contains(&alpha));
            // the same voxel permutation is applied to both volumes
            let mut pairs: Vec<(i64, i64)> = a
                .hr
                .iter()
                .zip(&a.cond)
                .map(|(&h, &c)| ((h / alpha).round() as i64, (c / alpha).round() as i64))
                .map(|(h, c)| (h.abs(), c.abs()))
                .collect();
            pairs.sort();
            let expect: Vec<(i64, i64)> = (0..n as i64).map(|i| (i, i * 7 % 13)).collect();
            assert_eq!(pairs, expect);
        }
    }

    #[test]
    fn incompatible_dims_are_rejected() {
        let cfg = toy_config();
        let data = vec![blobs(12, 2, 1)];
        assert!(matches!(pretrain(&data, &cfg), Err(Error::ShapeIncompatible(_))));
    }
}
