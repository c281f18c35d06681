use serde::{Deserialize, Serialize};

use super::executor::PolicyVariant;
use crate::controller::ControllerConfig;
use crate::policy::{train_on, Evaluator, PolicyConfig, TrainConfig, TrainOutcome};
use crate::scalar::Scalar;
use crate::segmenter::{
    add_intermediate_waypoints, attach_labels, augment_sparse_states, label_modes, relabel_sparse_actions,
    Segmentation,
};
use crate::traj::{Demonstration, LabeledStep, Mode};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessConfig {
    /// Replace sparse-period actions with controller actions.
    pub relabel: bool,
    /// Extra waypoints inserted evenly into each sparse segment.
    pub add_waypoints: usize,
    /// Std of the proprio jitter used for sparse-state augmentation, meters.
    pub augment_sigma: f64,
    /// Augmented copies appended per demo.
    pub augment_copies: usize,
    pub seed: u64,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            relabel: true,
            add_waypoints: 0,
            augment_sigma: 0.0,
            augment_copies: 0,
            seed: 0,
        }
    }
}

pub fn segment_demo(demo: &Demonstration, add_waypoints: usize) -> Result<Segmentation> {
    let proprio = demo.proprio();
    let seg = label_modes(&demo.clicks(), &proprio)?;
    Ok(add_intermediate_waypoints(&seg, &proprio, add_waypoints))
}

/// Click traces to training tuples: segment, optionally relabel, optionally augment.
pub fn process_demos(
    demos: &[Demonstration],
    cfg: &ProcessConfig,
    ctrl: &ControllerConfig,
) -> Result<Vec<Vec<LabeledStep>>> {
    let mut out = Vec::with_capacity(demos.len() * (1 + cfg.augment_copies));
    for demo in demos {
        let seg = segment_demo(demo, cfg.add_waypoints)?;
        out.push(if cfg.relabel {
            relabel_sparse_actions(demo, &seg, ctrl)
        } else {
            attach_labels(demo, &seg)
        });
    }
    if cfg.augment_sigma > 0.0 {
        let base = out.len();
        for copy in 0..cfg.augment_copies {
            for i in 0..base {
                let seed = cfg.seed ^ ((copy * base + i) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                out.push(augment_sparse_states(&out[i], cfg.augment_sigma, seed, ctrl)?);
            }
        }
    }
    Ok(out)
}

/// Hindsight waypoints `N` steps ahead, clamped to the final state.
pub fn next_n_labels(demo: &Demonstration, n: usize) -> Vec<LabeledStep> {
    let last = demo.len().saturating_sub(1);
    demo.steps
        .iter()
        .enumerate()
        .map(|(t, s)| LabeledStep {
            obs: s.obs,
            action: s.action,
            waypoint: demo.steps[(t + n).min(last)].obs.proprio,
            mode: Mode::Sparse,
            relabeled: false,
        })
        .collect()
}

/// Training tuples as each variant expects them.
///
/// Dense-only baselines see raw actions marked dense everywhere; waypoint-only
/// baselines see every step marked sparse.
pub fn variant_labels(
    variant: PolicyVariant,
    demos: &[Demonstration],
    cfg: &ProcessConfig,
    ctrl: &ControllerConfig,
) -> Result<Vec<Vec<LabeledStep>>> {
    let force = |labeled: Vec<Vec<LabeledStep>>, mode: Mode| {
        labeled
            .into_iter()
            .map(|d| d.into_iter().map(|s| LabeledStep { mode, ..s }).collect())
            .collect()
    };
    Ok(match variant {
        PolicyVariant::Hydra => process_demos(demos, cfg, ctrl)?,
        // Augmented states need controller actions, which is relabeling.
        PolicyVariant::HydraNr => {
            let raw = ProcessConfig { relabel: false, augment_sigma: 0.0, ..cfg.clone() };
            process_demos(demos, &raw, ctrl)?
        }
        PolicyVariant::Bc | PolicyVariant::BcRnn => {
            let raw = ProcessConfig { relabel: false, augment_sigma: 0.0, ..cfg.clone() };
            force(process_demos(demos, &raw, ctrl)?, Mode::Dense)
        }
        PolicyVariant::WpNext(n) => demos.iter().map(|d| next_n_labels(d, n)).collect(),
        PolicyVariant::WpMode => {
            let raw = ProcessConfig { relabel: false, augment_sigma: 0.0, ..cfg.clone() };
            force(process_demos(demos, &raw, ctrl)?, Mode::Sparse)
        }
    })
}

pub fn variant_policy(variant: PolicyVariant, seed: u64) -> PolicyConfig {
    match variant {
        PolicyVariant::Hydra | PolicyVariant::HydraNr => PolicyConfig::hydra(seed),
        PolicyVariant::Bc => PolicyConfig::bc(seed),
        PolicyVariant::BcRnn => PolicyConfig::bc_rnn(seed),
        PolicyVariant::WpNext(_) | PolicyVariant::WpMode => PolicyConfig::waypoint_only(seed),
    }
}

/// Single-head variants put all loss weight on their one head and drop the mode term.
pub fn variant_train_config(variant: PolicyVariant, base: &TrainConfig) -> TrainConfig {
    match variant {
        PolicyVariant::Hydra | PolicyVariant::HydraNr => base.clone(),
        _ => TrainConfig {
            gamma: 0.0,
            beta: 0.0,
            smoothing: 1,
            ..base.clone()
        },
    }
}

/// Label, process and train the policy for `variant`.
pub fn make_baseline<S: Scalar>(
    variant: PolicyVariant,
    demos: &[Demonstration],
    process: &ProcessConfig,
    ctrl: &ControllerConfig,
    train: &TrainConfig,
    evaluator: Option<Evaluator<'_, S>>,
) -> Result<TrainOutcome<S>> {
    let labeled = variant_labels(variant, demos, process, ctrl)?;
    let cfg = variant_train_config(variant, train);
    train_on(&labeled, &cfg, variant_policy(variant, train.seed), evaluator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{scripted_demo, EnvConfig, NoiseProfile};

    fn demos(n: u64) -> Vec<Demonstration> {
        (0..n)
            .map(|s| scripted_demo(&EnvConfig::default(), s, &NoiseProfile::default()).unwrap())
            .collect()
    }

    #[test]
    fn no_relabel_differs_only_in_flag_and_sparse_actions() {
        let d = demos(3);
        let ctrl = ControllerConfig::default();
        let a = variant_labels(PolicyVariant::Hydra, &d, &ProcessConfig::default(), &ctrl).unwrap();
        let b = variant_labels(PolicyVariant::HydraNr, &d, &ProcessConfig::default(), &ctrl).unwrap();
        for ((x, y), demo) in a.iter().zip(&b).zip(&d) {
            for ((s, t), raw) in x.iter().zip(y).zip(&demo.steps) {
                assert!(!t.relabeled);
                assert_eq!(s.relabeled, !s.mode.is_dense());
                assert_eq!((s.obs, s.waypoint, s.mode), (t.obs, t.waypoint, t.mode));
                assert_eq!(t.action, raw.action);
            }
        }
    }

    #[test]
    fn next_n_targets() {
        let d = &demos(1)[0];
        let l = next_n_labels(d, 3);
        let last = d.len() - 1;
        assert_eq!(l[0].waypoint, d.steps[3].obs.proprio);
        assert_eq!(l[last - 1].waypoint, d.steps[last].obs.proprio);
        assert!(l.iter().all(|s| s.mode == Mode::Sparse));
    }

    #[test]
    fn dense_baselines_keep_raw_actions() {
        let d = demos(2);
        let l = variant_labels(PolicyVariant::Bc, &d, &ProcessConfig::default(), &ControllerConfig::default()).unwrap();
        for (x, demo) in l.iter().zip(&d) {
            for (s, raw) in x.iter().zip(&demo.steps) {
                assert_eq!((s.mode, s.action), (Mode::Dense, raw.action));
            }
        }
    }

    #[test]
    fn augmentation_appends_copies() {
        let d = demos(2);
        let cfg = ProcessConfig { augment_sigma: 0.01, augment_copies: 2, ..Default::default() };
        let l = process_demos(&d, &cfg, &ControllerConfig::default()).unwrap();
        assert_eq!(l.len(), 6);
        assert_ne!(l[2], l[0]);
    }
}
