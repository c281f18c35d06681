//! Recurrent click-state predictor for labeling demos from a small annotated subset.
//!
//! Two logits per step: the dense mode itself, and a switch signal that
//! fires on the isolated click ending a sparse segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{encode_action, encode_obs, ACTION_DIM, OBS_DIM};
use crate::neural::{Adam, AdamConfig, Gru, Mlp, MlpConfig, ParamStore, RecurrentConfig};
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::segmenter::{dense_mask, moving_average};
use crate::traj::{ActionCaps, Demonstration};
use crate::{HydraError, Result};

const INPUT_DIM: usize = OBS_DIM + ACTION_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelerConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Odd moving-average width used when decoding the mode stream.
    pub smoothing: usize,
    /// Weight on positive switch targets, which are rare.
    pub switch_weight: f64,
    pub caps: ActionCaps,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            steps: 1500,
            batch_size: 4,
            lr: 3e-3,
            seed: 0,
            smoothing: 3,
            switch_weight: 4.0,
            caps: ActionCaps::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModeLabeler<S> {
    pub config: LabelerConfig,
    pub params: ParamStore<S>,
    gru: Gru,
    head: Mlp,
}

/// Per-step `(mode, switch)` targets derived from a click trace.
pub fn click_targets(clicks: &[bool]) -> (Vec<bool>, Vec<bool>) {
    let dense = dense_mask(clicks);
    let switch = clicks.iter().zip(&dense).map(|(&c, &d)| c && !d).collect();
    (dense, switch)
}

fn inputs<S: Scalar>(demo: &Demonstration, caps: &ActionCaps) -> Vec<Vec<S>> {
    demo.steps
        .iter()
        .map(|s| {
            let mut x = encode_obs::<S>(&s.obs).to_vec();
            x.extend(encode_action::<S>(&s.action, caps));
            x
        })
        .collect()
}

impl<S: Scalar> ModeLabeler<S> {
    pub fn new(config: LabelerConfig) -> Result<Self> {
        if config.hidden == 0 || config.smoothing.is_multiple_of(2) {
            return Err(HydraError::validation("labeler needs a positive hidden size and odd smoothing"));
        }
        let mut params = ParamStore::new(config.seed);
        let gru = Gru::new(
            &mut params,
            "labeler.rnn",
            RecurrentConfig {
                input: INPUT_DIM,
                hidden: config.hidden,
            },
        )?;
        let head = Mlp::new(&mut params, "labeler.head", MlpConfig::new(config.hidden, &[config.hidden], 2))?;
        Ok(Self {
            config,
            params,
            gru,
            head,
        })
    }

    /// Raw `(mode, switch)` logits for every step of `demo`.
    pub fn logits(&self, demo: &Demonstration) -> (Vec<f64>, Vec<f64>) {
        let mut h = self.gru.zero_state();
        let mut mode = Vec::with_capacity(demo.len());
        let mut switch = Vec::with_capacity(demo.len());
        for x in inputs::<S>(demo, &self.config.caps) {
            h = self.gru.step_traced(&self.params, &h, &x).0;
            let out = self.head.run(&self.params, &h);
            mode.push(out[0].as_f64());
            switch.push(out[1].as_f64());
        }
        (mode, switch)
    }

    /// Mean weighted cross-entropy over all steps of `demos`, gradients left in `params`.
    pub fn loss(&mut self, demos: &[&Demonstration]) -> S {
        self.params.zero_grad();
        let count: usize = demos.iter().map(|d| d.len()).sum();
        let scale = S::one() / S::of_count(count.max(1));
        let pos_w = S::lit(self.config.switch_weight);
        let mut total = S::zero();
        for demo in demos {
            let (dense, switch) = click_targets(&demo.clicks());
            let mut h = self.gru.zero_state();
            let mut traces = Vec::with_capacity(demo.len());
            for (t, x) in inputs::<S>(demo, &self.config.caps).into_iter().enumerate() {
                let (next, gtr) = self.gru.step_traced(&self.params, &h, &x);
                let htr = self.head.run_traced(&self.params, &next);
                let out = htr.output();
                let ym = if dense[t] { S::one() } else { S::zero() };
                let ys = if switch[t] { S::one() } else { S::zero() };
                let ws = if switch[t] { pos_w } else { S::one() };
                total += softplus(out[0]) - ym * out[0] + ws * (softplus(out[1]) - ys * out[1]);
                let d = [
                    (sigmoid(out[0]) - ym) * scale,
                    ws * (sigmoid(out[1]) - ys) * scale,
                ];
                traces.push((gtr, htr, d));
                h = next;
            }
            let mut carry = vec![S::zero(); self.gru.hidden_size()];
            for (gtr, htr, d) in traces.iter().rev() {
                let dh = self.head.backward(&mut self.params, htr, d);
                let dh: Vec<S> = dh.iter().zip(&carry).map(|(a, b)| *a + *b).collect();
                carry = self.gru.backward(&mut self.params, gtr, &dh).0;
            }
        }
        total * scale
    }
}

/// Fit a labeler on the first `round(fraction · n)` demos.
pub fn train_mode_labeler<S: Scalar>(
    demos: &[Demonstration],
    fraction: f64,
    cfg: &LabelerConfig,
) -> Result<ModeLabeler<S>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HydraError::validation(format!("label fraction {fraction} outside (0, 1]")));
    }
    let k = (fraction * demos.len() as f64).round() as usize;
    if k == 0 {
        return Err(HydraError::validation(format!(
            "label fraction {fraction} of {} demos selects none",
            demos.len()
        )));
    }
    let train = &demos[..k];
    let mut labeler = ModeLabeler::<S>::new(cfg.clone())?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &labeler.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c61_6265_6c65_72);
    for _ in 0..cfg.steps {
        let batch: Vec<&Demonstration> = (0..cfg.batch_size.max(1))
            .map(|_| &train[rng.random_range(0..train.len())])
            .collect();
        labeler.loss(&batch);
        adam.step(&mut labeler.params);
    }
    Ok(labeler)
}

/// Turn the two logit streams into a click trace.
///
/// Dense steps are where the smoothed mode probability exceeds 0.5. Switch
/// clicks sit at local maxima of the switch probability whose `n`-step
/// window mass exceeds 0.5, and are dropped next to dense steps.
pub fn decode_clicks(mode_logits: &[f64], switch_logits: &[f64], n: usize) -> Vec<bool> {
    let len = mode_logits.len();
    let n = n.max(1).min(if len % 2 == 1 { len } else { len.saturating_sub(1) }.max(1));
    let pm: Vec<f64> = mode_logits.iter().map(|&l| sigmoid(l)).collect();
    let dense: Vec<bool> = moving_average(&pm, n).into_iter().map(|p| p > 0.5).collect();
    let ps: Vec<f64> = switch_logits.iter().map(|&l| sigmoid(l)).collect();
    let mass: Vec<f64> = moving_average(&ps, n).into_iter().map(|m| m * n as f64).collect();
    let near_dense = |t: usize| {
        dense[t] || (t > 0 && dense[t - 1]) || (t + 1 < len && dense[t + 1])
    };
    (0..len)
        .map(|t| {
            if dense[t] {
                return true;
            }
            let left = t == 0 || ps[t] > ps[t - 1];
            let right = t + 1 == len || ps[t] >= ps[t + 1];
            left && right && mass[t] > 0.5 && !near_dense(t)
        })
        .collect()
}

pub fn predict_clicks<S: Scalar>(labeler: &ModeLabeler<S>, demo: &Demonstration) -> Vec<bool> {
    let (m, s) = labeler.logits(demo);
    decode_clicks(&m, &s, labeler.config.smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check;
    use crate::traj::{Action, EnvState, Observation, Pose2, ProprioState, Step};

    #[test]
    fn strongly_negative_logits_give_no_clicks() {
        assert!(decode_clicks(&[-9.0; 12], &[-9.0; 12], 3).iter().all(|c| !c));
    }

    #[test]
    fn dense_run_survives_smoothing() {
        let mut m = vec![-20.0; 12];
        m[6..=8].iter_mut().for_each(|v| *v = 20.0);
        let clicks = decode_clicks(&m, &[-20.0; 12], 3);
        let on: Vec<usize> = (0..12).filter(|&t| clicks[t]).collect();
        assert_eq!(on, vec![6, 7, 8]);
    }

    #[test]
    fn sharp_switch_peak_becomes_isolated_click() {
        let mut s = vec![-20.0; 10];
        s[3] = 20.0;
        let clicks = decode_clicks(&[-20.0; 10], &s, 3);
        let on: Vec<usize> = (0..10).filter(|&t| clicks[t]).collect();
        assert_eq!(on, vec![3]);
    }

    #[test]
    fn targets_split_isolated_and_sustained() {
        let c = [false, true, false, true, true, true, false];
        let (d, s) = click_targets(&c);
        assert_eq!(d, vec![false, false, false, true, true, true, false]);
        assert_eq!(s, vec![false, true, false, false, false, false, false]);
    }

    fn toy_demo() -> Demonstration {
        let clicks = [false, false, true, false, true, true, true, false, false];
        Demonstration {
            id: "toy".into(),
            dt: 0.1,
            steps: clicks
                .iter()
                .enumerate()
                .map(|(i, &c)| Step {
                    obs: Observation {
                        proprio: ProprioState::new(0.1 * i as f64, 0.2, 0.0, 0.0),
                        env: EnvState {
                            object_pose: Pose2::new(0.5, 0.5, 0.0),
                            slot_pose: Pose2::new(0.8, 0.8, 0.0),
                            object_held: false,
                        },
                    },
                    action: Action::new(0.01 * i as f64, 0.0, 0.0, 0.0),
                    click: c,
                })
                .collect(),
            meta: Default::default(),
        }
    }

    #[test]
    fn loss_gradients() {
        let demo = toy_demo();
        let mut lab = ModeLabeler::<f64>::new(LabelerConfig {
            hidden: 5,
            ..Default::default()
        })
        .unwrap();
        let mut ps = lab.params.clone();
        let report = grad_check(
            &mut ps,
            |ps| {
                std::mem::swap(&mut lab.params, ps);
                let l = lab.loss(&[&demo]);
                std::mem::swap(&mut lab.params, ps);
                l
            },
            1e-5,
        );
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn fraction_selecting_nothing_is_rejected() {
        let demos = vec![toy_demo(); 3];
        let cfg = LabelerConfig { steps: 0, ..Default::default() };
        assert!(train_mode_labeler::<f64>(&demos, 0.1, &cfg).is_err());
        assert!(train_mode_labeler::<f64>(&demos, 0.0, &cfg).is_err());
        assert!(train_mode_labeler::<f64>(&demos, 0.5, &cfg).is_ok());
    }
}
