use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::{PolicyBundle, PolicyConfig};
use super::loss::{hydra_loss, LossConfig, LossParts, StepTarget};
use crate::neural::{Adam, AdamConfig, ParamStore};
use crate::scalar::Scalar;
use crate::segmenter::smooth_modes;
use crate::traj::{ActionCaps, Dataset, LabeledStep};
use crate::{HydraError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Window length `H`.
    pub horizon: usize,
    pub gamma: f64,
    pub beta: f64,
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Learning rate at the last step as a fraction of `lr`, reached by cosine decay. 1 keeps it constant.
    pub lr_final: f64,
    pub steps: usize,
    /// Evaluate and snapshot every this many steps; 0 disables evaluation.
    pub eval_every: usize,
    pub seed: u64,
    /// Odd moving-average width applied to mode targets; 1 keeps hard bits.
    pub smoothing: usize,
    pub gmm_components: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            horizon: 10,
            gamma: 0.5,
            beta: 0.01,
            lr: 1e-3,
            weight_decay: 0.1,
            lr_final: 0.01,
            steps: 10_000,
            eval_every: 1000,
            seed: 0,
            smoothing: 1,
            gmm_components: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(HydraError::validation(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.beta >= 0.0) {
            return Err(HydraError::validation(format!("beta {} must be ≥ 0", self.beta)));
        }
        if !(self.lr > 0.0) {
            return Err(HydraError::validation(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.horizon == 0 {
            return Err(HydraError::validation("batch size and horizon must be positive"));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= 1.0) || !(self.weight_decay >= 0.0) {
            return Err(HydraError::validation("lr_final must lie in (0, 1] and weight decay be ≥ 0"));
        }
        if self.smoothing.is_multiple_of(2) {
            return Err(HydraError::validation("smoothing width must be odd"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.lr_final == 1.0 {
            return self.lr;
        }
        let progress = step as f64 / (self.steps - 1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.lr_final + (1.0 - self.lr_final) * cos)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(flatten)]
    pub parts: LossParts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Optimizer steps taken when the snapshot was evaluated.
    pub step: usize,
    pub success: f64,
    pub checkpoint: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<LossRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    pub fn checkpoint_ids(&self) -> Vec<usize> {
        self.evals.iter().map(|e| e.checkpoint).collect()
    }
}

/// Checkpoint with the highest evaluation success; the earliest wins ties.
pub fn select_checkpoint(log: &TrainLog) -> Result<usize> {
    let mut best: Option<&EvalRecord> = None;
    for e in &log.evals {
        if best.is_none_or(|b| e.success > b.success) {
            best = Some(e);
        }
    }
    best.map(|e| e.checkpoint)
        .ok_or_else(|| HydraError::validation("training log has no evaluations"))
}

pub struct TrainOutcome<S> {
    /// The selected checkpoint, or the final parameters when nothing was evaluated.
    pub bundle: PolicyBundle<S>,
    pub log: TrainLog,
    pub checkpoints: Vec<ParamStore<S>>,
}

/// Network-space targets for every labeled demo.
pub fn prepare_targets<S: Scalar>(
    labeled: &[Vec<LabeledStep>],
    smoothing: usize,
    caps: &ActionCaps,
) -> Result<Vec<Vec<StepTarget<S>>>> {
    labeled
        .iter()
        .map(|steps| {
            if steps.is_empty() {
                return Ok(Vec::new());
            }
            let modes: Vec<_> = steps.iter().map(|s| s.mode).collect();
            let n = smoothing.min(if steps.len() % 2 == 1 { steps.len() } else { steps.len() - 1 }).max(1);
            let probs = smooth_modes(&modes, n)?.probs;
            Ok(steps
                .iter()
                .zip(probs)
                .map(|(s, p)| StepTarget::from_labeled(s, p, caps))
                .collect())
        })
        .collect()
}

pub type Evaluator<'a, S> = &'a mut dyn FnMut(&PolicyBundle<S>) -> f64;

/// Fit a policy to labeled demos with the mode-weighted objective.
pub fn train<S: Scalar>(
    dataset: &Dataset,
    cfg: &TrainConfig,
    policy: PolicyConfig,
    evaluator: Option<Evaluator<'_, S>>,
) -> Result<TrainOutcome<S>> {
    let labeled = dataset
        .labeled
        .as_ref()
        .ok_or_else(|| HydraError::validation("dataset has no labeled steps"))?;
    train_on(labeled, cfg, policy, evaluator)
}

pub fn train_on<S: Scalar>(
    labeled: &[Vec<LabeledStep>],
    cfg: &TrainConfig,
    mut policy: PolicyConfig,
    mut evaluator: Option<Evaluator<'_, S>>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if labeled.iter().all(|d| d.is_empty()) {
        return Err(HydraError::validation("cannot train on an empty dataset"));
    }
    policy.gmm_components = cfg.gmm_components;
    let data: Vec<Vec<StepTarget<S>>> = prepare_targets(labeled, cfg.smoothing, &policy.caps)?
        .into_iter()
        .filter(|d| !d.is_empty())
        .collect();
    let mut bundle = PolicyBundle::<S>::new(policy)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        &bundle.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let loss_cfg = cfg.loss();
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    for step in 0..cfg.steps {
        let batch: Vec<&[StepTarget<S>]> = (0..cfg.batch_size)
            .map(|_| {
                let demo = &data[rng.random_range(0..data.len())];
                let start = rng.random_range(0..demo.len());
                &demo[start..(start + cfg.horizon).min(demo.len())]
            })
            .collect();
        let parts = hydra_loss(&mut bundle, &batch, &loss_cfg)?;
        adam.config.lr = cfg.lr_at(step);
        adam.step(&mut bundle.params);
        log.losses.push(LossRecord { step, parts });
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            if let Some(eval) = evaluator.as_mut() {
                let success = eval(&bundle);
                debug!("step {}: loss {:.5} success {:.3}", step + 1, parts.total, success);
                log.evals.push(EvalRecord {
                    step: step + 1,
                    success,
                    checkpoint: checkpoints.len(),
                });
                checkpoints.push(bundle.params.clone());
            }
        }
    }
    if !log.evals.is_empty() {
        let best = select_checkpoint(&log)?;
        bundle.params.copy_values_from(&checkpoints[best]);
    }
    Ok(TrainOutcome {
        bundle,
        log,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(successes: &[f64]) -> TrainLog {
        TrainLog {
            losses: Vec::new(),
            evals: successes
                .iter()
                .enumerate()
                .map(|(i, &s)| EvalRecord {
                    step: 10 * (i + 1),
                    success: s,
                    checkpoint: i,
                })
                .collect(),
        }
    }

    #[test]
    fn checkpoint_selection() {
        assert_eq!(select_checkpoint(&log_with(&[0.4])).unwrap(), 0);
        assert_eq!(select_checkpoint(&log_with(&[0.2, 0.6, 0.6])).unwrap(), 1);
        assert_eq!(select_checkpoint(&log_with(&[0.1, 0.2, 0.3, 0.9])).unwrap(), 3);
        assert!(select_checkpoint(&TrainLog::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { gamma: 1.2, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta: -0.1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { smoothing: 2, ..Default::default() }.validate().is_err());
    }
}
