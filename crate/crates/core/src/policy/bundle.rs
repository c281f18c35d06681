use serde::{Deserialize, Serialize};

use super::features::{decode_action, decode_waypoint, encode_obs, ACTION_DIM, OBS_DIM, WAYPOINT_DIM};
use crate::neural::{gmm_mode, gmm_width, Activation, Archive, Gru, Mlp, MlpConfig, ParamStore, RecurrentConfig};
use crate::scalar::{sigmoid, Scalar};
use crate::traj::{Action, ActionCaps, Observation, ProprioState};
use crate::{HydraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrunkKind {
    Recurrent,
    FeedForward,
}

/// Which output heads a bundle carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heads {
    pub waypoint: bool,
    pub action: bool,
    pub mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub trunk: TrunkKind,
    /// Recurrent state size, or embedding width for the feed-forward trunk.
    pub hidden: usize,
    pub head_hidden: Vec<usize>,
    pub sparse_hidden: Vec<usize>,
    /// Mixture components in the action head; 0 selects a deterministic head.
    pub gmm_components: usize,
    /// Hidden-layer activation of every feed-forward block.
    pub activation: Activation,
    pub heads: Heads,
    pub caps: ActionCaps,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            trunk: TrunkKind::Recurrent,
            hidden: 64,
            head_hidden: vec![64],
            sparse_hidden: vec![64, 64],
            gmm_components: 0,
            activation: Activation::Relu,
            heads: Heads {
                waypoint: true,
                action: true,
                mode: true,
            },
            caps: ActionCaps::default(),
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn hydra(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn bc(seed: u64) -> Self {
        Self {
            trunk: TrunkKind::FeedForward,
            heads: Heads { waypoint: false, action: true, mode: false },
            seed,
            ..Self::default()
        }
    }

    pub fn bc_rnn(seed: u64) -> Self {
        Self {
            heads: Heads { waypoint: false, action: true, mode: false },
            seed,
            ..Self::default()
        }
    }

    pub fn waypoint_only(seed: u64) -> Self {
        Self {
            heads: Heads { waypoint: true, action: false, mode: false },
            seed,
            ..Self::default()
        }
    }

    pub fn action_width(&self) -> usize {
        match self.gmm_components {
            0 => ACTION_DIM,
            k => gmm_width(k, ACTION_DIM),
        }
    }

    fn has_trunk(&self) -> bool {
        self.heads.action || self.heads.mode
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(HydraError::validation("policy hidden size must be positive"));
        }
        if !(self.heads.waypoint || self.heads.action) {
            return Err(HydraError::validation("policy needs a waypoint or an action head"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Trunk {
    Recurrent(Gru),
    FeedForward(Mlp),
}

/// Parameters plus the layer layout that reads them.
#[derive(Debug, Clone)]
pub struct PolicyBundle<S> {
    pub config: PolicyConfig,
    pub params: ParamStore<S>,
    pub(crate) sparse: Option<Mlp>,
    pub(crate) trunk: Option<Trunk>,
    pub(crate) action_head: Option<Mlp>,
    pub(crate) mode_head: Option<Mlp>,
}

/// Per-step outputs of a forward pass over a window, in network space.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<S> {
    pub mode_logits: Vec<S>,
    pub actions: Vec<Vec<S>>,
    pub waypoints: Vec<Vec<S>>,
    pub hidden: Vec<S>,
}

impl<S: Scalar> PolicyBundle<S> {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let mlp = |input: usize, hidden: &[usize], output: usize| MlpConfig {
            activation: config.activation,
            ..MlpConfig::new(input, hidden, output)
        };
        let mut ps = ParamStore::new(config.seed);
        let sparse = if config.heads.waypoint {
            Some(Mlp::new(
                &mut ps,
                "sparse",
                mlp(OBS_DIM, &config.sparse_hidden, WAYPOINT_DIM),
            )?)
        } else {
            None
        };
        let trunk = if config.has_trunk() {
            Some(match config.trunk {
                TrunkKind::Recurrent => Trunk::Recurrent(Gru::new(
                    &mut ps,
                    "trunk",
                    RecurrentConfig { input: OBS_DIM, hidden: config.hidden },
                )?),
                TrunkKind::FeedForward => Trunk::FeedForward(Mlp::new(
                    &mut ps,
                    "trunk",
                    mlp(OBS_DIM, &[config.hidden], config.hidden),
                )?),
            })
        } else {
            None
        };
        let action_head = if config.heads.action {
            Some(Mlp::new(
                &mut ps,
                "action",
                mlp(config.hidden, &config.head_hidden, config.action_width()),
            )?)
        } else {
            None
        };
        let mode_head = if config.heads.mode {
            Some(Mlp::new(&mut ps, "mode", mlp(config.hidden, &config.head_hidden, 1))?)
        } else {
            None
        };
        Ok(Self {
            config,
            params: ps,
            sparse,
            trunk,
            action_head,
            mode_head,
        })
    }

    pub fn is_recurrent(&self) -> bool {
        matches!(self.trunk, Some(Trunk::Recurrent(_)))
    }

    /// Initial hidden state (empty for feed-forward trunks).
    pub fn initial_state(&self) -> Vec<S> {
        match &self.trunk {
            Some(Trunk::Recurrent(g)) => g.zero_state(),
            _ => Vec::new(),
        }
    }

    /// Trunk embedding for one step; advances `h` for recurrent trunks.
    pub(crate) fn embed(&self, h: &mut Vec<S>, x: &[S]) -> Vec<S> {
        match self.trunk.as_ref().expect("trunk present") {
            Trunk::Recurrent(g) => {
                let (next, _) = g.step_traced(&self.params, h, x);
                *h = next.clone();
                next
            }
            Trunk::FeedForward(m) => m.run(&self.params, x),
        }
    }

    /// Run the heads over a window of consecutive observations starting from `h0`.
    pub fn forward(&self, window: &[Observation], h0: &[S]) -> Result<ForwardOutput<S>> {
        if window.is_empty() {
            return Err(HydraError::validation("observation window is empty"));
        }
        let expected = self.initial_state().len();
        if h0.len() != expected {
            return Err(HydraError::validation(format!(
                "hidden state has {} entries, expected {expected}",
                h0.len()
            )));
        }
        let mut h = h0.to_vec();
        let mut out = ForwardOutput {
            mode_logits: Vec::with_capacity(window.len()),
            actions: Vec::with_capacity(window.len()),
            waypoints: Vec::with_capacity(window.len()),
            hidden: Vec::new(),
        };
        for obs in window {
            let x = encode_obs::<S>(obs);
            if let Some(sparse) = &self.sparse {
                out.waypoints.push(sparse.run(&self.params, &x));
            }
            if self.trunk.is_some() {
                let e = self.embed(&mut h, &x);
                if let Some(head) = &self.action_head {
                    out.actions.push(head.run(&self.params, &e));
                }
                if let Some(head) = &self.mode_head {
                    out.mode_logits.push(head.run(&self.params, &e)[0]);
                }
            }
        }
        out.hidden = h;
        Ok(out)
    }

    /// Decode a raw action head output into a capped action.
    pub fn decode_action(&self, raw: &[S]) -> Action {
        match self.config.gmm_components {
            0 => decode_action(raw, &self.config.caps),
            k => decode_action(&gmm_mode(raw, k, ACTION_DIM), &self.config.caps),
        }
    }

    /// Same architecture with the parameters converted to another scalar type.
    pub fn cast<T: Scalar>(&self) -> PolicyBundle<T> {
        PolicyBundle {
            config: self.config.clone(),
            params: self.params.cast(),
            sparse: self.sparse.clone(),
            trunk: self.trunk.clone(),
            action_head: self.action_head.clone(),
            mode_head: self.mode_head.clone(),
        }
    }

    pub fn to_archive(&self) -> Archive<PolicyConfig> {
        Archive::from_store(self.config.clone(), &self.params)
    }

    pub fn from_archive(archive: &Archive<PolicyConfig>) -> Result<Self> {
        archive.check_header()?;
        let mut bundle = Self::new(archive.config.clone())?;
        archive.restore_into(&mut bundle.params)?;
        Ok(bundle)
    }

    /// Stateful single-step evaluation for closed-loop execution.
    pub fn runner(&self, reset_every: Option<usize>) -> PolicyRunner<'_, S> {
        PolicyRunner {
            bundle: self,
            h: self.initial_state(),
            steps: 0,
            reset_every: reset_every.filter(|&n| n > 0),
        }
    }
}

/// Decoded outputs for one control step. Missing heads yield `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyStep {
    pub dense_prob: Option<f64>,
    pub action: Option<Action>,
    pub waypoint: Option<ProprioState>,
}

pub struct PolicyRunner<'a, S> {
    bundle: &'a PolicyBundle<S>,
    h: Vec<S>,
    steps: usize,
    reset_every: Option<usize>,
}

impl<S: Scalar> PolicyRunner<'_, S> {
    pub fn hidden(&self) -> &[S] {
        &self.h
    }

    pub fn step(&mut self, obs: &Observation) -> PolicyStep {
        let b = self.bundle;
        if let Some(n) = self.reset_every {
            if self.steps > 0 && self.steps.is_multiple_of(n) {
                self.h = b.initial_state();
            }
        }
        self.steps += 1;
        let x = encode_obs::<S>(obs);
        let waypoint = b
            .sparse
            .as_ref()
            .map(|m| decode_waypoint(&m.run(&b.params, &x), &obs.proprio));
        let (mut action, mut dense_prob) = (None, None);
        if b.trunk.is_some() {
            let e = b.embed(&mut self.h, &x);
            action = b.action_head.as_ref().map(|m| b.decode_action(&m.run(&b.params, &e)));
            dense_prob = b
                .mode_head
                .as_ref()
                .map(|m| sigmoid(m.run(&b.params, &e)[0]).as_f64());
        }
        PolicyStep {
            dense_prob,
            action,
            waypoint,
        }
    }
}
