//! Regression and classification losses, summed over pixels and channels,
//! with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::colorspace::{AbImage, ColorDistribution};
use crate::error::{check_dims, Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!("huber delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

pub fn huber(diff: f64, delta: f64) -> f64 {
    let a = diff.abs();
    if a < delta {
        0.5 * a * a
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_sum<T: Copy + Into<f64>>(pred: &[T], target: &[T], delta: f64) -> f64 {
    assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(&p, &t)| huber(p.into() - t.into(), delta)).sum()
}

/// Derivative of [`huber_sum`] with respect to `pred`.
pub fn huber_sum_grad<T: Copy + Into<f64>>(pred: &[T], target: &[T], delta: f64) -> Vec<f64> {
    assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(&p, &t)| (p.into() - t.into()).clamp(-delta, delta)).collect()
}

/// `−Σ Z · log(max(p, floor))` over flat rows.
pub fn cross_entropy_sum<T: Copy + Into<f64>>(pred: &[T], target: &[T]) -> f64 {
    assert_eq!(pred.len(), target.len());
    -pred
        .iter()
        .zip(target)
        .map(|(&p, &z)| {
            let z = z.into();
            if z == 0.0 {
                0.0
            } else {
                z * p.into().max(PROB_FLOOR).ln()
            }
        })
        .sum::<f64>()
}

/// Derivative of [`cross_entropy_sum`] with respect to the probabilities.
pub fn cross_entropy_grad_probs<T: Copy + Into<f64>>(pred: &[T], target: &[T]) -> Vec<f64> {
    pred.iter()
        .zip(target)
        .map(|(&p, &z)| {
            let p = p.into();
            if p > PROB_FLOOR {
                -z.into() / p
            } else {
                0.0
            }
        })
        .collect()
}

/// Row-wise softmax of `q`-wide rows.
pub fn softmax_rows<T: Copy + Into<f64>>(logits: &[T], q: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(q) {
        let max = row.iter().map(|&v| v.into()).fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v.into() - max).exp()));
        let total: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Gradient of softmax-then-cross-entropy with respect to the logits:
/// `p · ΣZ − Z` per row.
pub fn cross_entropy_grad_logits(probs: &[f64], target: &[f64], q: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    for (p, z) in probs.chunks_exact(q).zip(target.chunks_exact(q)) {
        let mass: f64 = z.iter().sum();
        out.extend(p.iter().zip(z).map(|(p, z)| p * mass - z));
    }
    out
}

fn flat_ab(img: &AbImage) -> impl Iterator<Item = f32> + '_ {
    img.ab.iter().flat_map(|p| p.iter().copied())
}

/// Huber loss summed over every pixel and both ab channels.
pub fn huber_image_loss(pred: &AbImage, target: &AbImage, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_dims(target.dims(), pred.dims())?;
    Ok(flat_ab(pred).zip(flat_ab(target)).map(|(p, t)| huber(p as f64 - t as f64, cfg.delta)).sum())
}

pub fn cross_entropy_image_loss(pred: &ColorDistribution, target: &ColorDistribution) -> Result<f64> {
    check_dims(target.dims(), pred.dims())?;
    if pred.q != target.q {
        return Err(Error::ModelMismatch(format!("distribution widths differ: {} vs {}", pred.q, target.q)));
    }
    Ok(cross_entropy_sum(&pred.probs, &target.probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        let cfg = LossConfig::default();
        let one = |p: f32, t: f32| huber_image_loss(&AbImage::filled(1, 1, [p, 0.0]), &AbImage::filled(1, 1, [t, 0.0]), &cfg).unwrap();
        assert_eq!(one(3.0, 3.0), 0.0);
        assert_eq!(one(0.5, 0.0), 0.125);
        assert_eq!(one(-2.0, 0.0), 1.5);
    }

    #[test]
    fn uniform_prediction_costs_log_q() {
        let q = 313;
        let mut pred = ColorDistribution::zeros(1, 1, q);
        pred.probs.fill(1.0 / q as f32);
        let mut target = ColorDistribution::zeros(1, 1, q);
        target.probs[17] = 1.0;
        let loss = cross_entropy_image_loss(&pred, &target).unwrap();
        assert!((loss - (q as f64).ln()).abs() < 1e-6);
        assert_eq!(cross_entropy_image_loss(&target, &target).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let cfg = LossConfig::default();
        assert!(huber_image_loss(&AbImage::zeros(2, 2), &AbImage::zeros(2, 3), &cfg).is_err());
        assert!(huber_image_loss(&AbImage::zeros(2, 2), &AbImage::zeros(2, 2), &LossConfig { delta: 0.0 }).is_err());
    }

    #[test]
    fn softmax_rows_normalize() {
        let p = softmax_rows(&[1.0f64, 2.0, 3.0, 1000.0, 1000.0, 1000.0], 3);
        assert!((p[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[3] - 1.0 / 3.0).abs() < 1e-12);
    }
}
