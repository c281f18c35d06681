//! Regression likelihoods: mean-squared error and diagonal Gaussian mixtures.
//!
//! A mixture head with `k` components over `d` dimensions emits
//! `k` logits, then `k * d` means, then `k * d` log standard deviations.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{HydraError, Result};

const LOG_STD_MIN: f64 = -6.0;
const LOG_STD_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GmmHeadConfig {
    /// Component count; 0 selects a deterministic (squared-error) head.
    pub components: usize,
    pub dim: usize,
}

impl GmmHeadConfig {
    /// Width of the raw head output.
    pub fn output_size(&self) -> usize {
        if self.components == 0 {
            self.dim
        } else {
            gmm_width(self.components, self.dim)
        }
    }
}

pub fn gmm_width(k: usize, d: usize) -> usize {
    k * (1 + 2 * d)
}

fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let m = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<S>().ln()
}

fn softmax<S: Scalar>(xs: &[S]) -> Vec<S> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Mean over dimensions of the squared residual, with its gradient.
pub fn mse<S: Scalar>(pred: &[S], target: &[S]) -> (S, Vec<S>) {
    debug_assert_eq!(pred.len(), target.len());
    let n = S::of_count(pred.len());
    let mut loss = S::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - t;
            loss += r * r;
            S::lit(2.0) * r / n
        })
        .collect();
    (loss / n, grad)
}

/// Negative log density of a unit-variance Gaussian centered at `mean`.
pub fn unit_gaussian_nll<S: Scalar>(mean: &[S], target: &[S]) -> (S, Vec<S>) {
    let d = S::of_count(mean.len());
    let half_log_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut sq = S::zero();
    let grad = mean
        .iter()
        .zip(target)
        .map(|(&m, &t)| {
            sq += (m - t) * (m - t);
            m - t
        })
        .collect();
    (S::lit(0.5) * sq + d * half_log_2pi, grad)
}

/// Negative log-likelihood of `target` under the mixture encoded in `head`,
/// returning the loss and its gradient with respect to `head`.
pub fn gmm_nll<S: Scalar>(head: &[S], target: &[S], k: usize) -> Result<(S, Vec<S>)> {
    let d = target.len();
    if k == 0 || head.len() != gmm_width(k, d) {
        return Err(HydraError::validation(format!(
            "mixture head of width {} does not encode {k} components over {d} dims",
            head.len()
        )));
    }
    if head.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(HydraError::Numeric {
            step: 0,
            message: "non-finite mixture input".into(),
        });
    }
    let logits = &head[..k];
    let means = &head[k..k + k * d];
    let raw_log_std = &head[k + k * d..];
    let (lo, hi) = (S::lit(LOG_STD_MIN), S::lit(LOG_STD_MAX));
    let half_log_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());

    let log_mix = {
        let lse = log_sum_exp(logits);
        logits.iter().map(|&l| l - lse).collect::<Vec<_>>()
    };
    let mut comp = vec![S::zero(); k];
    for c in 0..k {
        let mut lp = log_mix[c];
        for j in 0..d {
            let ls = raw_log_std[c * d + j].max(lo).min(hi);
            let z = (target[j] - means[c * d + j]) / ls.exp();
            lp -= S::lit(0.5) * z * z + ls + half_log_2pi;
        }
        comp[c] = lp;
    }
    let nll = -log_sum_exp(&comp);
    let resp = softmax(&comp);
    let mix = softmax(logits);

    let mut grad = vec![S::zero(); head.len()];
    for c in 0..k {
        grad[c] = mix[c] - resp[c];
        for j in 0..d {
            let raw = raw_log_std[c * d + j];
            let ls = raw.max(lo).min(hi);
            let inv_var = (-(ls + ls)).exp();
            let diff = target[j] - means[c * d + j];
            grad[k + c * d + j] = -resp[c] * diff * inv_var;
            if raw > lo && raw < hi {
                grad[k + k * d + c * d + j] = -resp[c] * (diff * diff * inv_var - S::one());
            }
        }
    }
    if !nll.is_finite() {
        return Err(HydraError::Numeric {
            step: 0,
            message: "non-finite mixture likelihood".into(),
        });
    }
    Ok((nll, grad))
}

/// Mean of the highest-weight component.
pub fn gmm_mode<S: Scalar>(head: &[S], k: usize, d: usize) -> Vec<S> {
    let best = (0..k)
        .max_by(|&a, &b| head[a].partial_cmp(&head[b]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    head[k + best * d..k + (best + 1) * d].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

    fn unit_head(means: &[&[f64]], logits: &[f64]) -> Vec<f64> {
        let d = means[0].len();
        let mut h = logits.to_vec();
        for m in means {
            h.extend_from_slice(m);
        }
        h.extend(std::iter::repeat_n(0.0, means.len() * d));
        h
    }

    #[test]
    fn zero_residual() {
        let t = [0.1, 0.2, -0.3, 0.4];
        let (nll, _) = gmm_nll(&unit_head(&[&t], &[0.0]), &t, 1).unwrap();
        assert!((nll - 4.0 * HALF_LOG_2PI).abs() < 1e-12);
        let (u, _) = unit_gaussian_nll(&t, &t);
        assert!((u - 4.0 * HALF_LOG_2PI).abs() < 1e-12);
    }

    #[test]
    fn small_residual() {
        let t = [0.0; 4];
        let m = [0.1, 0.0, 0.0, 0.0];
        let (nll, _) = gmm_nll(&unit_head(&[&m], &[0.0]), &t, 1).unwrap();
        assert!((nll - (4.0 * HALF_LOG_2PI + 0.005)).abs() < 1e-12);
    }

    #[test]
    fn identical_components_collapse() {
        let t = [0.3, -0.2];
        let m = [0.1, 0.1];
        let one = gmm_nll(&unit_head(&[&m], &[0.0]), &t, 1).unwrap().0;
        let two = gmm_nll(&unit_head(&[&m, &m], &[0.7, 0.7]), &t, 2).unwrap().0;
        assert!((one - two).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_layout_and_nan() {
        assert!(gmm_nll(&[0.0; 4], &[0.0; 2], 1).is_err());
        let mut h = unit_head(&[&[0.0, 0.0]], &[0.0]);
        h[1] = f64::NAN;
        assert!(matches!(gmm_nll(&h, &[0.0, 0.0], 1), Err(HydraError::Numeric { .. })));
    }

    #[test]
    fn mse_is_per_dimension_mean() {
        let (l, g) = mse::<f64>(&[0.1, 0.0, 0.0, 0.0], &[0.0; 4]);
        assert!((l - 0.0025).abs() < 1e-15);
        assert!((g[0] - 0.05).abs() < 1e-15);
    }
}
