//! Closed-loop execution of a policy in the simulator.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{is_reached, timeout_steps, waypoint_action, ControllerConfig};
use crate::policy::{PolicyRunner, PolicyStep};
use crate::scalar::Scalar;
use crate::sim::{Demonstrator, Env, EnvConfig, NoiseProfile, Stage, StageFlags};
use crate::traj::{Action, Demonstration, Mode, Observation, ProprioState, Step};
use crate::{HydraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyVariant {
    Hydra,
    HydraNr,
    Bc,
    BcRnn,
    WpNext(usize),
    WpMode,
}

impl PolicyVariant {
    pub fn is_waypoint_only(self) -> bool {
        matches!(self, PolicyVariant::WpNext(_) | PolicyVariant::WpMode)
    }

    pub fn is_dense_only(self) -> bool {
        matches!(self, PolicyVariant::Bc | PolicyVariant::BcRnn)
    }
}

impl fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyVariant::Hydra => f.write_str("hydra"),
            PolicyVariant::HydraNr => f.write_str("hydra_nr"),
            PolicyVariant::Bc => f.write_str("bc"),
            PolicyVariant::BcRnn => f.write_str("bc_rnn"),
            PolicyVariant::WpNext(n) => write!(f, "wp_next{n}"),
            PolicyVariant::WpMode => f.write_str("wp_mode"),
        }
    }
}

impl FromStr for PolicyVariant {
    type Err = HydraError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match norm.as_str() {
            "hydra" => PolicyVariant::Hydra,
            "hydra_nr" => PolicyVariant::HydraNr,
            "bc" => PolicyVariant::Bc,
            "bc_rnn" => PolicyVariant::BcRnn,
            "wp_mode" => PolicyVariant::WpMode,
            other => match other.strip_prefix("wp_next").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => PolicyVariant::WpNext(n),
                _ => return Err(HydraError::validation(format!("unknown policy variant '{s}'"))),
            },
        })
    }
}

impl Serialize for PolicyVariant {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub mode_threshold: f64,
    pub controller: ControllerConfig,
    pub variant: PolicyVariant,
    /// Latch predicted waypoints and servo to them. Without it every sparse
    /// step takes a single controller action toward the current prediction.
    pub with_t: bool,
    /// Sample the mode from its probability instead of thresholding.
    pub stochastic_mode: bool,
    /// Treat every step as dense.
    pub force_dense: bool,
    /// Zero the recurrent state every this many queries, matching the training window.
    pub hidden_reset: Option<usize>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            mode_threshold: 0.5,
            controller: ControllerConfig::default(),
            variant: PolicyVariant::Hydra,
            with_t: true,
            stochastic_mode: false,
            force_dense: false,
            hidden_reset: Some(10),
        }
    }
}

impl ExecutorConfig {
    pub fn for_variant(variant: PolicyVariant, with_t: bool) -> Self {
        Self {
            variant,
            with_t,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mode_threshold > 0.0 && self.mode_threshold < 1.0) {
            return Err(HydraError::validation("mode threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Anything that maps observations to policy outputs, one step at a time.
pub trait Agent {
    fn act(&mut self, obs: &Observation) -> PolicyStep;

    /// Current recurrent state, when the agent has one.
    fn hidden_state(&self) -> Option<Vec<f64>> {
        None
    }
}

impl<S: Scalar> Agent for PolicyRunner<'_, S> {
    fn act(&mut self, obs: &Observation) -> PolicyStep {
        self.step(obs)
    }

    fn hidden_state(&self) -> Option<Vec<f64>> {
        let h = self.hidden();
        (!h.is_empty()).then(|| h.iter().map(|v| v.as_f64()).collect())
    }
}

/// The scripted expert presented as an always-dense policy.
pub struct ScriptedAgent {
    demo: Demonstrator,
}

impl ScriptedAgent {
    pub fn new(cfg: &EnvConfig, profile: &NoiseProfile, episode_seed: u64) -> Self {
        Self {
            demo: Demonstrator::new(cfg, profile, episode_seed),
        }
    }
}

impl Agent for ScriptedAgent {
    fn act(&mut self, obs: &Observation) -> PolicyStep {
        let action = self
            .demo
            .act(obs)
            .map(|(a, _)| a)
            .unwrap_or_else(|_| Action::hold(obs.proprio.grip));
        PolicyStep {
            dense_prob: Some(1.0),
            action: Some(action),
            waypoint: None,
        }
    }
}

/// Uniformly random actions within the caps.
pub struct RandomAgent {
    rng: ChaCha8Rng,
    caps: crate::traj::ActionCaps,
}

impl RandomAgent {
    pub fn new(seed: u64, caps: crate::traj::ActionCaps) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            caps,
        }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, _obs: &Observation) -> PolicyStep {
        let c = self.caps;
        let action = Action::new(
            self.rng.random_range(-c.dx..=c.dx),
            self.rng.random_range(-c.dy..=c.dy),
            self.rng.random_range(-c.dtheta..=c.dtheta),
            self.rng.random_range(0.0..=1.0),
        );
        PolicyStep {
            dense_prob: Some(1.0),
            action: Some(action),
            waypoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatchKind {
    Latch,
    Reached,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatchEvent {
    pub step: usize,
    pub kind: LatchKind,
    pub waypoint: ProprioState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    /// Observation before each step, the executed action, and `click` set on dense-mode steps.
    pub trajectory: Vec<Step>,
    pub modes: Vec<Mode>,
    /// Whether each executed action came from the waypoint controller.
    pub servoed: Vec<bool>,
    pub events: Vec<LatchEvent>,
    pub stage: Stage,
    pub flags: StageFlags,
    pub success: bool,
    pub length: usize,
    /// Policy queries whose outputs were ignored while servoing.
    pub ignored_queries: usize,
    /// Mean L2 change of the recurrent state per ignored query.
    pub servo_hidden_drift: f64,
}

impl RolloutResult {
    /// The executed episode in the demonstration schema, for replay.
    pub fn to_demo(&self, id: &str, dt: f64) -> Demonstration {
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("source".into(), "rollout".into());
        meta.insert("success".into(), self.success.to_string());
        Demonstration {
            id: id.into(),
            dt,
            steps: self.trajectory.clone(),
            meta,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Route {
    Hybrid,
    DenseOnly,
    /// Every step converts the predicted waypoint to one controller action.
    Tracking,
    /// Per-step choice between the dense action and one controller step, no latch.
    HybridTracking,
}

/// Run one episode from the environment's current state.
///
/// Each step queries the agent. With no waypoint latched and a sparse mode
/// decision, the predicted waypoint is latched. While latched, the controller
/// acts until the waypoint is reached or the timeout elapses; on that step the
/// waypoint is released and the predicted dense action runs instead.
pub fn rollout(agent: &mut dyn Agent, env: &mut Env, cfg: &ExecutorConfig, seed: u64) -> RolloutResult {
    let ctrl = &cfg.controller;
    let limit = timeout_steps(ctrl);
    let route = match (cfg.variant.is_dense_only(), cfg.variant.is_waypoint_only(), cfg.with_t) {
        (true, _, _) => Route::DenseOnly,
        (_, true, false) => Route::Tracking,
        (_, false, false) => Route::HybridTracking,
        _ => Route::Hybrid,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = RolloutResult {
        trajectory: Vec::new(),
        modes: Vec::new(),
        servoed: Vec::new(),
        events: Vec::new(),
        stage: env.state().stage,
        flags: StageFlags::default(),
        success: false,
        length: 0,
        ignored_queries: 0,
        servo_hidden_drift: 0.0,
    };
    let mut latched: Option<(ProprioState, usize)> = None;
    let mut drift = 0.0;
    let mut obs = env.observation();
    while !env.is_done() {
        let t = res.trajectory.len();
        let before = if latched.is_some() { agent.hidden_state() } else { None };
        let out = agent.act(&obs);
        let hold = Action::hold(obs.proprio.grip);
        let dense = if cfg.force_dense || route == Route::DenseOnly {
            true
        } else {
            match out.dense_prob {
                None => out.action.is_some(),
                Some(p) if cfg.stochastic_mode => rng.random_bool(p.clamp(0.0, 1.0)),
                Some(p) => p >= cfg.mode_threshold,
            }
        };
        let policy_action = out.action.unwrap_or(hold);
        let (action, servo) = match route {
            Route::DenseOnly => (policy_action, false),
            Route::Tracking => match out.waypoint {
                Some(w) => (waypoint_action(&obs.proprio, &w, ctrl), true),
                None => (policy_action, false),
            },
            Route::HybridTracking => match out.waypoint {
                Some(w) if !dense => (waypoint_action(&obs.proprio, &w, ctrl), true),
                _ => (policy_action, false),
            },
            Route::Hybrid => {
                if latched.is_none() && !dense {
                    if let Some(w) = out.waypoint {
                        latched = Some((w, 0));
                        res.events.push(LatchEvent { step: t, kind: LatchKind::Latch, waypoint: w });
                    }
                }
                match latched {
                    Some((w, n)) if !is_reached(&obs.proprio, &w, ctrl) && n < limit => {
                        latched = Some((w, n + 1));
                        if let (Some(b), Some(a)) = (before, agent.hidden_state()) {
                            res.ignored_queries += 1;
                            drift += b.iter().zip(&a).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                        }
                        (waypoint_action(&obs.proprio, &w, ctrl), true)
                    }
                    Some((w, n)) => {
                        let kind = if n >= limit && !is_reached(&obs.proprio, &w, ctrl) {
                            LatchKind::Timeout
                        } else {
                            LatchKind::Reached
                        };
                        res.events.push(LatchEvent { step: t, kind, waypoint: w });
                        latched = None;
                        (policy_action, false)
                    }
                    None => (policy_action, false),
                }
            }
        };
        let step = env.step(&action).expect("episode not done");
        res.trajectory.push(Step {
            obs,
            action,
            click: dense && route != Route::Tracking,
        });
        res.modes.push(Mode::from_bit(dense && !servo));
        res.servoed.push(servo);
        obs = step.obs;
    }
    let s = env.state();
    res.stage = s.stage;
    res.flags = StageFlags::from_stage(s.stage);
    res.success = s.success;
    res.length = res.trajectory.len();
    if res.ignored_queries > 0 {
        res.servo_hidden_drift = drift / res.ignored_queries as f64;
    }
    res
}
