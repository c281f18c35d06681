use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::executor::{rollout, Agent, ExecutorConfig, RolloutResult};
use crate::policy::{encode_action, encode_obs, PolicyBundle, ACTION_DIM, OBS_DIM};
use crate::scalar::Scalar;
use crate::sim::{reset, EnvConfig};
use crate::traj::{ActionCaps, LabeledStep};
use crate::{HydraError, Result};

/// Episode `i` of an evaluation resets the environment with seed `base + i`.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OfflineMetrics {
    pub mode_accuracy: f64,
    pub mode_precision: f64,
    pub mode_recall: f64,
    /// Mean squared error of predicted actions in cap-normalized units.
    pub action_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: f64,
    /// Fraction of episodes that reached at least grasp, transport, insert and done.
    pub stage_success: [f64; 4],
    pub mean_length: f64,
    pub mean_latches: f64,
    pub timeouts: usize,
    pub offline: Option<OfflineMetrics>,
    pub action_consistency: Option<f64>,
}

/// Aggregate finished rollouts.
pub fn summarize(results: &[RolloutResult]) -> Metrics {
    let n = results.len().max(1) as f64;
    let mut hits = [0usize; 4];
    for r in results {
        for (acc, hit) in hits.iter_mut().zip(r.flags.as_array()) {
            *acc += usize::from(hit);
        }
    }
    let stage_success = hits.map(|h| h as f64 / n);
    let count = |kind| results.iter().map(|r| r.events.iter().filter(|e| e.kind == kind).count()).sum::<usize>();
    Metrics {
        episodes: results.len(),
        success_rate: results.iter().filter(|r| r.success).count() as f64 / n,
        stage_success,
        mean_length: results.iter().map(|r| r.length as f64).sum::<f64>() / n,
        mean_latches: count(super::LatchKind::Latch) as f64 / n,
        timeouts: count(super::LatchKind::Timeout),
        offline: None,
        action_consistency: None,
    }
}

/// Run `n` episodes in parallel, building a fresh agent for each episode seed.
pub fn evaluate_with<A, F>(make: F, env: &EnvConfig, exec: &ExecutorConfig, n: usize, base_seed: u64) -> Result<Vec<RolloutResult>>
where
    A: Agent,
    F: Fn(u64) -> A + Sync,
{
    if n == 0 {
        return Err(HydraError::validation("evaluation needs at least one episode"));
    }
    env.validate()?;
    exec.validate()?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            let (mut e, _) = reset(env, seed);
            let mut agent = make(seed);
            rollout(&mut agent, &mut e, exec, seed)
        })
        .collect())
}

/// Closed-loop success statistics of a trained policy on a fixed episode set.
pub fn evaluate<S: Scalar>(
    bundle: &PolicyBundle<S>,
    env: &EnvConfig,
    exec: &ExecutorConfig,
    n: usize,
    base_seed: u64,
) -> Result<Metrics> {
    let results = evaluate_with(|_| bundle.runner(exec.hidden_reset), env, exec, n, base_seed)?;
    Ok(summarize(&results))
}

/// Mode and action prediction quality against held-out labels.
///
/// Each demo is replayed through the policy from a fresh state, with the
/// same periodic hidden reset used at test time.
pub fn offline_metrics<S: Scalar>(
    bundle: &PolicyBundle<S>,
    held_out: &[Vec<LabeledStep>],
    exec: &ExecutorConfig,
) -> OfflineMetrics {
    let caps = bundle.config.caps;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    let (mut se, mut count) = (0.0, 0usize);
    for demo in held_out {
        let mut runner = bundle.runner(exec.hidden_reset);
        for step in demo {
            let out = runner.step(&step.obs);
            if let Some(p) = out.dense_prob {
                match (p >= exec.mode_threshold, step.mode.is_dense()) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, false) => tn += 1,
                    (false, true) => fn_ += 1,
                }
            }
            if let Some(a) = out.action {
                let (x, y) = (encode_action::<f64>(&a, &caps), encode_action::<f64>(&step.action, &caps));
                se += x.iter().zip(&y).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / x.len() as f64;
                count += 1;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    OfflineMetrics {
        mode_accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        mode_precision: ratio(tp, tp + fp),
        mode_recall: ratio(tp, tp + fn_),
        action_mse: if count == 0 { 0.0 } else { se / count as f64 },
    }
}

/// Action variability among nearest-neighbor states.
///
/// For every step, the `k` closest steps from other demos (by encoded
/// observation) are gathered with it and the per-axis variance of their
/// normalized actions is averaged. Lower is more consistent.
pub fn action_consistency(demos: &[Vec<LabeledStep>], k: usize, caps: &ActionCaps) -> f64 {
    let points: Vec<(usize, [f64; OBS_DIM], [f64; ACTION_DIM])> = demos
        .iter()
        .enumerate()
        .flat_map(|(d, steps)| {
            steps
                .iter()
                .map(move |s| (d, encode_obs::<f64>(&s.obs), encode_action::<f64>(&s.action, caps)))
        })
        .collect();
    if points.is_empty() || k == 0 {
        return 0.0;
    }
    let total: f64 = points
        .par_iter()
        .map(|(d, x, a)| {
            let mut near: Vec<(f64, &[f64; ACTION_DIM])> = points
                .iter()
                .filter(|(e, _, _)| e != d)
                .map(|(_, y, b)| (x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>(), b))
                .collect();
            let m = k.min(near.len());
            if m == 0 {
                return 0.0;
            }
            near.select_nth_unstable_by(m - 1, |p, q| p.0.total_cmp(&q.0));
            let group: Vec<&[f64; ACTION_DIM]> = std::iter::once(a).chain(near[..m].iter().map(|p| p.1)).collect();
            variance(&group)
        })
        .sum();
    total / points.len() as f64
}

fn variance(group: &[&[f64; ACTION_DIM]]) -> f64 {
    let n = group.len() as f64;
    let dim = group[0].len();
    (0..dim)
        .map(|j| {
            let mean = group.iter().map(|v| v[j]).sum::<f64>() / n;
            group.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / dim as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{PolicyVariant, RandomAgent, ScriptedAgent};
    use crate::policy::PolicyConfig;
    use crate::sim::NoiseProfile;
    use crate::traj::{Action, Mode, Observation, ProprioState};

    #[test]
    fn scripted_policy_always_succeeds() {
        let env = EnvConfig::default();
        let exec = ExecutorConfig::for_variant(PolicyVariant::Bc, true);
        let results = evaluate_with(
            |s| ScriptedAgent::new(&env, &NoiseProfile { seed: s, ..Default::default() }, s),
            &env,
            &exec,
            20,
            EVAL_SEED_BASE,
        )
        .unwrap();
        let m = summarize(&results);
        assert_eq!(m.success_rate, 1.0);
        assert_eq!(m.stage_success, [1.0; 4]);
    }

    #[test]
    fn random_policy_never_succeeds() {
        let env = EnvConfig::default();
        let exec = ExecutorConfig::for_variant(PolicyVariant::Bc, true);
        let results = evaluate_with(|s| RandomAgent::new(s, env.caps), &env, &exec, 50, EVAL_SEED_BASE).unwrap();
        assert_eq!(summarize(&results).success_rate, 0.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let bundle = PolicyBundle::<f64>::new(PolicyConfig::hydra(3)).unwrap();
        let env = EnvConfig { max_steps: 60, system_noise: 0.1, ..Default::default() };
        let exec = ExecutorConfig::default();
        let a = evaluate(&bundle, &env, &exec, 6, 5).unwrap();
        let b = evaluate(&bundle, &env, &exec, 6, 5).unwrap();
        assert_eq!(a, b);
        assert!(evaluate(&bundle, &env, &exec, 0, 5).is_err());
    }

    fn step(x: f64, dx: f64, mode: Mode) -> LabeledStep {
        LabeledStep {
            obs: Observation {
                proprio: ProprioState::new(x, 0.5, 0.0, 0.0),
                ..Default::default()
            },
            action: Action::new(dx, 0.0, 0.0, 0.0),
            waypoint: ProprioState::default(),
            mode,
            relabeled: false,
        }
    }

    #[test]
    fn consistency_of_identical_actions_is_zero() {
        let caps = ActionCaps::default();
        let demo: Vec<_> = (0..5).map(|i| step(0.1 * i as f64, 0.02, Mode::Sparse)).collect();
        assert_eq!(action_consistency(&[demo.clone(), demo.clone()], 2, &caps), 0.0);
    }

    #[test]
    fn consistency_by_hand() {
        // Two single-step demos at the same state with normalized dx of +0.5 and -0.5.
        let caps = ActionCaps::default();
        let a = vec![step(0.3, 0.025, Mode::Sparse)];
        let b = vec![step(0.3, -0.025, Mode::Sparse)];
        // Per-axis variance: dx 0.25, others 0; averaged over 4 axes.
        assert!((action_consistency(&[a, b], 1, &caps) - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn offline_counts() {
        let bundle = PolicyBundle::<f64>::new(PolicyConfig::hydra(0)).unwrap();
        let demo: Vec<_> = (0..8).map(|i| step(0.1 * i as f64, 0.0, Mode::from_bit(i % 2 == 0))).collect();
        let m = offline_metrics(&bundle, &[demo], &ExecutorConfig::default());
        for v in [m.mode_accuracy, m.mode_precision, m.mode_recall] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(m.action_mse.is_finite());
    }
}
