use serde::{Deserialize, Serialize};

use super::bundle::{PolicyBundle, Trunk};
use super::features::{encode_action, encode_obs, encode_waypoint, ACTION_DIM, OBS_DIM, WAYPOINT_DIM};
use crate::neural::{gmm_nll, mse, GruTrace, MlpTrace};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::traj::{ActionCaps, LabeledStep, Mode};
use crate::{HydraError, Result};

/// `α_m = mγ + (1 − m)(1 − γ)`: the weight on the waypoint term.
pub fn mode_weight<S: Scalar>(m: Mode, gamma: S) -> S {
    match m {
        Mode::Dense => gamma,
        Mode::Sparse => S::one() - gamma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 0.5, beta: 0.01 }
    }
}

/// One training step in network space.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTarget<S> {
    pub obs: [S; OBS_DIM],
    pub action: [S; ACTION_DIM],
    pub waypoint: [S; WAYPOINT_DIM],
    pub mode: Mode,
    /// Target probability of dense mode (the mode bit, or its smoothed value).
    pub mode_prob: S,
}

impl<S: Scalar> StepTarget<S> {
    pub fn from_labeled(step: &LabeledStep, mode_prob: f64, caps: &ActionCaps) -> Self {
        Self {
            obs: encode_obs(&step.obs),
            action: encode_action(&step.action, caps),
            waypoint: encode_waypoint(&step.waypoint, &step.obs.proprio),
            mode: step.mode,
            mode_prob: S::lit(mode_prob),
        }
    }
}

/// Raw head outputs for one step; absent heads contribute nothing.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs<'a, S> {
    pub action: Option<&'a [S]>,
    pub waypoint: Option<&'a [S]>,
    pub mode_logit: Option<S>,
}

/// Mean loss terms over the steps they were computed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// `α·NLL_w`
    pub waypoint: f64,
    /// `(1 − α)·NLL_a`
    pub action: f64,
    /// Unweighted binary cross-entropy of the mode head.
    pub mode: f64,
}

pub(crate) struct StepGrads<S> {
    pub loss: S,
    pub parts: [S; 3],
    pub d_action: Vec<S>,
    pub d_waypoint: Vec<S>,
    pub d_logit: S,
}

fn action_nll<S: Scalar>(out: &[S], target: &[S], k: usize) -> Result<(S, Vec<S>)> {
    if k == 0 {
        Ok(mse(out, target))
    } else {
        gmm_nll(out, target, k)
    }
}

pub(crate) fn step_grads<S: Scalar>(
    heads: HeadOutputs<'_, S>,
    target: &StepTarget<S>,
    gmm_components: usize,
    cfg: &LossConfig,
) -> Result<StepGrads<S>> {
    let alpha = mode_weight(target.mode, S::lit(cfg.gamma));
    let beta = S::lit(cfg.beta);
    let mut g = StepGrads {
        loss: S::zero(),
        parts: [S::zero(); 3],
        d_action: Vec::new(),
        d_waypoint: Vec::new(),
        d_logit: S::zero(),
    };
    if let Some(out) = heads.waypoint {
        let (l, d) = mse(out, &target.waypoint);
        g.parts[0] = alpha * l;
        g.d_waypoint = d.into_iter().map(|v| v * alpha).collect();
    }
    if let Some(out) = heads.action {
        let w = S::one() - alpha;
        let (l, d) = action_nll(out, &target.action, gmm_components)?;
        g.parts[1] = w * l;
        g.d_action = d.into_iter().map(|v| v * w).collect();
    }
    if let Some(logit) = heads.mode_logit {
        let p = target.mode_prob;
        g.parts[2] = softplus(logit) - p * logit;
        g.d_logit = beta * (sigmoid(logit) - p);
    }
    g.loss = g.parts[0] + g.parts[1] + beta * g.parts[2];
    Ok(g)
}

/// Per-step objective `(1 − α)·NLL_a + α·NLL_w + β·BCE` on raw head outputs.
pub fn step_loss<S: Scalar>(
    heads: HeadOutputs<'_, S>,
    target: &StepTarget<S>,
    gmm_components: usize,
    cfg: &LossConfig,
) -> Result<S> {
    step_grads(heads, target, gmm_components, cfg).map(|g| g.loss)
}

enum TrunkTrace<S> {
    Recurrent(GruTrace<S>),
    FeedForward(MlpTrace<S>),
}

struct StepRecord<S> {
    sparse: Option<MlpTrace<S>>,
    trunk: Option<TrunkTrace<S>>,
    action: Option<MlpTrace<S>>,
    mode: Option<MlpTrace<S>>,
    grads: StepGrads<S>,
}

/// Mean objective over every step of every window, with gradients left in
/// `bundle.params`. Each window is run from a zero hidden state.
pub fn hydra_loss<S: Scalar>(
    bundle: &mut PolicyBundle<S>,
    batch: &[&[StepTarget<S>]],
    cfg: &LossConfig,
) -> Result<LossParts> {
    let count: usize = batch.iter().map(|w| w.len()).sum();
    if count == 0 {
        return Err(HydraError::validation("loss batch has no steps"));
    }
    let scale = S::one() / S::of_count(count);
    let k = bundle.config.gmm_components;
    let PolicyBundle {
        params,
        sparse,
        trunk,
        action_head,
        mode_head,
        ..
    } = bundle;
    params.zero_grad();
    let mut sums = [S::zero(); 4];
    let mut flat = 0usize;
    for window in batch {
        let mut records: Vec<StepRecord<S>> = Vec::with_capacity(window.len());
        let mut h = match trunk {
            Some(Trunk::Recurrent(g)) => g.zero_state(),
            _ => Vec::new(),
        };
        for target in window.iter() {
            let sparse_tr = sparse.as_ref().map(|m| m.run_traced(params, &target.obs));
            let (trunk_tr, e) = match trunk.as_ref() {
                Some(Trunk::Recurrent(g)) => {
                    let (next, tr) = g.step_traced(params, &h, &target.obs);
                    h = next.clone();
                    (Some(TrunkTrace::Recurrent(tr)), next)
                }
                Some(Trunk::FeedForward(m)) => {
                    let tr = m.run_traced(params, &target.obs);
                    let e = tr.output().to_vec();
                    (Some(TrunkTrace::FeedForward(tr)), e)
                }
                None => (None, Vec::new()),
            };
            let action_tr = action_head.as_ref().map(|m| m.run_traced(params, &e));
            let mode_tr = mode_head.as_ref().map(|m| m.run_traced(params, &e));
            let heads = HeadOutputs {
                action: action_tr.as_ref().map(|t| t.output()),
                waypoint: sparse_tr.as_ref().map(|t| t.output()),
                mode_logit: mode_tr.as_ref().map(|t| t.output()[0]),
            };
            let grads = step_grads(heads, target, k, cfg)?;
            if !grads.loss.is_finite() {
                return Err(HydraError::Numeric {
                    step: flat,
                    message: format!("non-finite loss {}", grads.loss),
                });
            }
            sums[0] += grads.loss;
            for (s, p) in sums[1..].iter_mut().zip(grads.parts) {
                *s += p;
            }
            flat += 1;
            records.push(StepRecord {
                sparse: sparse_tr,
                trunk: trunk_tr,
                action: action_tr,
                mode: mode_tr,
                grads,
            });
        }

        let mut carry: Vec<S> = h.iter().map(|_| S::zero()).collect();
        for rec in records.iter().rev() {
            let g = &rec.grads;
            if let (Some(m), Some(tr)) = (sparse.as_ref(), rec.sparse.as_ref()) {
                let d: Vec<S> = g.d_waypoint.iter().map(|&v| v * scale).collect();
                m.backward(params, tr, &d);
            }
            let Some(trunk_tr) = rec.trunk.as_ref() else {
                continue;
            };
            let mut de = vec![S::zero(); bundle_hidden(trunk)];
            if let (Some(m), Some(tr)) = (action_head.as_ref(), rec.action.as_ref()) {
                let d: Vec<S> = g.d_action.iter().map(|&v| v * scale).collect();
                for (a, b) in de.iter_mut().zip(m.backward(params, tr, &d)) {
                    *a += b;
                }
            }
            if let (Some(m), Some(tr)) = (mode_head.as_ref(), rec.mode.as_ref()) {
                for (a, b) in de.iter_mut().zip(m.backward(params, tr, &[g.d_logit * scale])) {
                    *a += b;
                }
            }
            match (trunk.as_ref(), trunk_tr) {
                (Some(Trunk::Recurrent(gru)), TrunkTrace::Recurrent(tr)) => {
                    for (a, b) in de.iter_mut().zip(&carry) {
                        *a += *b;
                    }
                    carry = gru.backward(params, tr, &de).0;
                }
                (Some(Trunk::FeedForward(m)), TrunkTrace::FeedForward(tr)) => {
                    m.backward(params, tr, &de);
                }
                _ => unreachable!("trace matches trunk"),
            }
        }
    }
    let mean = |s: S| (s * scale).as_f64();
    Ok(LossParts {
        total: mean(sums[0]),
        waypoint: mean(sums[1]),
        action: mean(sums[2]),
        mode: mean(sums[3]),
    })
}

fn bundle_hidden(trunk: &Option<Trunk>) -> usize {
    match trunk {
        Some(Trunk::Recurrent(g)) => g.hidden_size(),
        Some(Trunk::FeedForward(m)) => m.output_size(),
        None => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check;
    use crate::policy::bundle::PolicyConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn target(mode: Mode, p: f64) -> StepTarget<f64> {
        StepTarget {
            obs: [0.0; OBS_DIM],
            action: [0.0; ACTION_DIM],
            waypoint: [0.0; WAYPOINT_DIM],
            mode,
            mode_prob: p,
        }
    }

    #[test]
    fn mode_weights() {
        assert_eq!(mode_weight(Mode::Sparse, 0.5), 0.5);
        assert_eq!(mode_weight(Mode::Dense, 0.2), 0.2);
        assert!((mode_weight(Mode::Sparse, 0.2) - 0.8f64).abs() < 1e-15);
    }

    #[test]
    fn worked_example() {
        let t = target(Mode::Dense, 1.0);
        let heads = HeadOutputs {
            action: Some(&[0.1, 0.0, 0.0, 0.0][..]),
            waypoint: Some(&[0.0; 4][..]),
            mode_logit: Some(0.0),
        };
        let l = step_loss(heads, &t, 0, &LossConfig { gamma: 0.5, beta: 0.01 }).unwrap();
        let want = 0.5 * (0.01 / 4.0) + 0.01 * std::f64::consts::LN_2;
        assert!((l - want).abs() < 1e-15);
        assert!((l - 0.008181).abs() < 5e-7);
    }

    #[test]
    fn saturated_perfect_fit() {
        let cfg = LossConfig::default();
        for (mode, logit) in [(Mode::Dense, 10.0), (Mode::Sparse, -10.0)] {
            let t = target(mode, mode.bit() as f64);
            let heads = HeadOutputs {
                action: Some(&[0.0; 4][..]),
                waypoint: Some(&[0.0; 4][..]),
                mode_logit: Some(logit),
            };
            assert!(step_loss(heads, &t, 0, &cfg).unwrap() < 1e-3);
        }
    }

    #[test]
    fn half_gamma_is_mode_symmetric() {
        let cfg = LossConfig { gamma: 0.5, beta: 0.0 };
        let (ra, rw) = ([0.3, -0.1, 0.2, 0.0], [0.05, 0.4, -0.2, 0.1]);
        for mode in [Mode::Dense, Mode::Sparse] {
            let flipped = if mode.is_dense() { Mode::Sparse } else { Mode::Dense };
            let a = step_loss(
                HeadOutputs { action: Some(&ra[..]), waypoint: Some(&rw[..]), mode_logit: None },
                &target(mode, 0.0),
                0,
                &cfg,
            )
            .unwrap();
            let b = step_loss(
                HeadOutputs { action: Some(&rw[..]), waypoint: Some(&ra[..]), mode_logit: None },
                &target(flipped, 0.0),
                0,
                &cfg,
            )
            .unwrap();
            assert!((a - b).abs() < 1e-15);
            let (la, _) = mse(&ra, &[0.0; 4]);
            let (lw, _) = mse(&rw, &[0.0; 4]);
            assert!((a - 0.5 * (la + lw)).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for g in [0.0, 0.1, 0.37, 0.5, 1.0] {
            assert!((mode_weight(Mode::Dense, g) + mode_weight(Mode::Sparse, g) - 1.0f64).abs() < 1e-15);
        }
    }

    #[test]
    fn all_dense_zero_gamma_is_behavior_cloning() {
        let cfg = LossConfig { gamma: 0.0, beta: 0.01 };
        let ra = [0.3, -0.1, 0.2, 0.0];
        let t = target(Mode::Dense, 1.0);
        let with_wp = step_loss(
            HeadOutputs { action: Some(&ra[..]), waypoint: Some(&[9.0; 4][..]), mode_logit: Some(0.7) },
            &t,
            0,
            &cfg,
        )
        .unwrap();
        let (la, _) = mse(&ra, &[0.0; 4]);
        let bce = softplus(0.7) - 0.7;
        assert!((with_wp - (la + 0.01 * bce)).abs() < 1e-15);
    }

    pub(crate) fn random_batch(rng: &mut ChaCha8Rng, windows: usize, h: usize) -> Vec<Vec<StepTarget<f64>>> {
        (0..windows)
            .map(|_| {
                let len = rng.random_range(1..=h);
                (0..len)
                    .map(|_| {
                        let dense = rng.random_bool(0.5);
                        StepTarget {
                            obs: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                            action: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                            waypoint: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                            mode: Mode::from_bit(dense),
                            mode_prob: rng.random_range(0.0..1.0),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn check(config: PolicyConfig, seed: u64) -> f64 {
        let mut bundle = PolicyBundle::<f64>::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_batch(&mut rng, 3, 5);
        let refs: Vec<&[StepTarget<f64>]> = batch.iter().map(|w| w.as_slice()).collect();
        let cfg = LossConfig { gamma: 0.3, beta: 0.5 };
        let mut ps = bundle.params.clone();
        let report = grad_check(
            &mut ps,
            |ps| {
                std::mem::swap(&mut bundle.params, ps);
                let l = hydra_loss(&mut bundle, &refs, &cfg).unwrap().total;
                std::mem::swap(&mut bundle.params, ps);
                l
            },
            1e-5,
        );
        report.max_rel_error
    }

    /// Small and smooth, so finite differences never straddle a ReLU kink.
    fn tiny(config: PolicyConfig) -> PolicyConfig {
        PolicyConfig {
            activation: crate::neural::Activation::Tanh,
            hidden: 6,
            head_hidden: vec![5],
            sparse_hidden: vec![5],
            ..config
        }
    }

    #[test]
    fn gradients_recurrent() {
        assert!(check(tiny(PolicyConfig::hydra(1)), 10) <= 1e-4);
    }

    #[test]
    fn gradients_feed_forward_and_gmm() {
        assert!(check(tiny(PolicyConfig::bc(2)), 11) <= 1e-4);
        let gmm = PolicyConfig { gmm_components: 3, ..tiny(PolicyConfig::hydra(3)) };
        assert!(check(gmm, 12) <= 1e-4);
    }

    #[test]
    fn non_finite_loss_names_step() {
        let mut bundle = PolicyBundle::<f64>::new(tiny(PolicyConfig::hydra(4))).unwrap();
        let mut batch = [target(Mode::Dense, 1.0), target(Mode::Dense, 1.0)];
        batch[1].action[0] = f64::NAN;
        match hydra_loss(&mut bundle, &[&batch[..]], &LossConfig::default()) {
            Err(HydraError::Numeric { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
