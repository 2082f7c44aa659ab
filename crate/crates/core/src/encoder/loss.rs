use serde::{Deserialize, Serialize};

use super::ContrastiveEncoder;
use crate::autograd::{Graph, Real, Var};
use crate::volume::ScalarVolume;
use crate::{Error, Result};

/// Restored volume, clear target and blurry input, all at the same dims.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTriple {
    pub anchor: ScalarVolume,
    pub positive: ScalarVolume,
    pub negative: ScalarVolume,
}

impl AnchorTriple {
    pub fn new(anchor: ScalarVolume, positive: ScalarVolume, negative: ScalarVolume) -> Result<Self> {
        for other in [&positive, &negative] {
            if other.dims() != anchor.dims() {
                return Err(Error::DimMismatch {
                    expected: anchor.dims().to_vec(),
                    actual: other.dims().to_vec(),
                });
            }
        }
        Ok(AnchorTriple {
            anchor,
            positive,
            negative,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveLossConfig {
    pub beta: f64,
    /// One weight per exposed feature level; empty means uniform 1.0.
    pub level_weights: Vec<f64>,
    pub epsilon: f64,
}

impl Default for ContrastiveLossConfig {
    fn default() -> Self {
        ContrastiveLossConfig {
            beta: 0.1,
            level_weights: Vec::new(),
            epsilon: 1e-7,
        }
    }
}

impl ContrastiveLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.level_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("level weights must be positive".into()));
        }
        Ok(())
    }

    /// Resolved weights for `levels` feature levels.
    pub fn weights(&self, levels: usize) -> Result<Vec<f64>> {
        if self.level_weights.is_empty() {
            return Ok(vec![1.0; levels]);
        }
        if self.level_weights.len() != levels {
            return Err(Error::Config(format!(
                "{} level weights for {levels} feature levels",
                self.level_weights.len()
            )));
        }
        Ok(self.level_weights.clone())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// One-against-the-batch energy loss.
///
/// The first term treats each HR energy as the positive class against the
/// whole batch; the second does the same for SR items with every energy
/// negated.
pub fn cld_loss(hr_energies: &[f64], sr_energies: &[f64]) -> Result<f64> {
    cld_loss_with_grad(hr_energies, sr_energies).map(|(l, _, _)| l)
}

/// [`cld_loss`] with its gradients with respect to the HR and SR energies.
pub fn cld_loss_with_grad(hr: &[f64], sr: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if hr.is_empty() || sr.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (nh, ns) = (hr.len() as f64, sr.len() as f64);
    let all = || hr.iter().chain(sr).copied();
    let lse_pos = log_sum_exp(all());
    let lse_neg = log_sum_exp(all().map(|e| -e));
    let term1 = hr.iter().map(|&e| lse_pos - e).sum::<f64>() / nh;
    let term2 = sr.iter().map(|&e| lse_neg + e).sum::<f64>() / ns;
    let p_pos = |e: f64| (e - lse_pos).exp();
    let p_neg = |e: f64| (-e - lse_neg).exp();
    let d_hr = hr.iter().map(|&e| -1.0 / nh + p_pos(e) - p_neg(e)).collect();
    let d_sr = sr.iter().map(|&e| p_pos(e) + 1.0 / ns - p_neg(e)).collect();
    Ok((term1 + term2, d_hr, d_sr))
}

/// Distance ratio between anchor-positive and anchor-negative features,
/// summed over levels. `anchor`, `positive` and `negative` hold the exposed
/// feature levels of each volume on the same tape.
pub fn regularizer_on_tape<T: Real>(
    g: &mut Graph<T>,
    anchor: &[Var],
    positive: &[Var],
    negative: &[Var],
    weights: &[f64],
    epsilon: f64,
) -> Var {
    assert!(anchor.len() == positive.len() && anchor.len() == negative.len());
    assert_eq!(anchor.len(), weights.len());
    let terms: Vec<(Var, T)> = (0..anchor.len())
        .map(|l| {
            let num = g.mean_abs_diff(positive[l], anchor[l]);
            let den = g.mean_abs_diff(negative[l], anchor[l]);
            let den = g.add_scalar(den, T::of(epsilon));
            (g.div(num, den), T::of(weights[l]))
        })
        .collect();
    g.lin_comb(&terms)
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / a.len() as f64
}

/// Eager evaluation of the feature-space pull/push ratio for one triple.
pub fn contrastive_regularizer(
    encoder: &ContrastiveEncoder,
    triple: &AnchorTriple,
    cfg: &ContrastiveLossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let fa = encoder.encode(&triple.anchor)?;
    let fp = encoder.encode(&triple.positive)?;
    let fnv = encoder.encode(&triple.negative)?;
    let w = cfg.weights(fa.levels.len())?;
    Ok((0..fa.levels.len())
        .map(|l| {
            let num = mean_abs_diff(&fp.levels[l].data, &fa.levels[l].data);
            let den = mean_abs_diff(&fnv.levels[l].data, &fa.levels[l].data) + cfg.epsilon;
            w[l] * num / den
        })
        .sum())
}

/// L1 reconstruction error plus `beta` times the regularizer.
pub fn combined_objective(
    encoder: &ContrastiveEncoder,
    triple: &AnchorTriple,
    cfg: &ContrastiveLossConfig,
) -> Result<f64> {
    let l1 = mean_abs_diff(triple.positive.values(), triple.anchor.values());
    Ok(l1 + cfg.beta * contrastive_regularizer(encoder, triple, cfg)?)
}
