//! Planar reach, grasp, transport and insert task.

mod demo;
mod render;

pub use demo::{decode_segments, scripted_demo, Demonstrator, NoiseProfile, PHASES_META_KEY};
pub use render::{render_frame, Primitive, PrimitiveKind, GRIPPER_SIZE, OBJECT_SIZE, SLOT_SIZE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::traj::{wrap_angle, Action, ActionCaps, EnvState, Observation, Pose2, ProprioState, DEFAULT_DT};
use crate::{HydraError, Result};

/// Gripper start pose shared by every episode.
pub const HOME: ProprioState = ProprioState {
    x: 0.5,
    y: 0.1,
    theta: 0.0,
    grip: 0.0,
};

/// Distance at which the gripper counts as approaching the object, or the held object the slot.
pub const STAGE_RADIUS: f64 = 0.06;

/// How system noise scales on each motion axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// Std proportional to the axis cap, independent of the command.
    #[default]
    Additive,
    /// Std proportional to the commanded displacement on that axis.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub grasp_tol_pos: f64,
    pub grasp_tol_theta: f64,
    pub insert_tol_pos: f64,
    pub insert_tol_theta: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub caps: ActionCaps,
    /// Std of the Gaussian added to each executed motion axis, as a fraction of
    /// the commanded displacement or of the axis cap (see [`NoiseModel`]).
    pub system_noise: f64,
    pub noise_model: NoiseModel,
    /// Object and slot positions are drawn from `[margin, 1 − margin]²`.
    pub margin: f64,
    pub min_separation: f64,
    /// Object and slot orientations are drawn from `[−max_theta, max_theta]`.
    pub max_theta: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grasp_tol_pos: 0.02,
            grasp_tol_theta: 0.15,
            insert_tol_pos: 0.01,
            insert_tol_theta: 0.1,
            dt: DEFAULT_DT,
            max_steps: 300,
            caps: ActionCaps::default(),
            system_noise: 0.0,
            noise_model: NoiseModel::Additive,
            margin: 0.15,
            min_separation: 0.3,
            max_theta: std::f64::consts::FRAC_PI_3,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [self.grasp_tol_pos, self.grasp_tol_theta, self.insert_tol_pos, self.insert_tol_theta];
        if tols.iter().any(|&t| !(t > 0.0)) {
            return Err(HydraError::validation("tolerances must be positive"));
        }
        if !(self.system_noise >= 0.0) {
            return Err(HydraError::validation("system noise must be ≥ 0"));
        }
        if !(self.margin >= 0.0 && self.margin < 0.5) || self.max_steps == 0 {
            return Err(HydraError::validation("invalid workspace sampling or step budget"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Reach,
    Grasp,
    Transport,
    Insert,
    Done,
}

/// Cumulative per-stage success: each flag means that stage was completed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub reach: bool,
    pub grasp: bool,
    pub transport: bool,
    pub insert: bool,
}

impl StageFlags {
    pub fn from_stage(stage: Stage) -> Self {
        Self {
            reach: stage > Stage::Reach,
            grasp: stage > Stage::Grasp,
            transport: stage > Stage::Transport,
            insert: stage > Stage::Insert,
        }
    }

    pub fn as_array(&self) -> [bool; 4] {
        [self.reach, self.grasp, self.transport, self.insert]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub flags: StageFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub proprio: ProprioState,
    pub object_pose: Pose2,
    pub slot_pose: Pose2,
    pub object_held: bool,
    pub step_count: usize,
    pub stage: Stage,
    pub success: bool,
    /// Held object pose in the gripper frame: `(dx, dy, dθ)`.
    grasp_offset: Option<(f64, f64, f64)>,
}

impl EpisodeState {
    pub fn observation(&self) -> Observation {
        Observation {
            proprio: self.proprio,
            env: EnvState {
                object_pose: self.object_pose,
                slot_pose: self.slot_pose,
                object_held: self.object_held,
            },
        }
    }

    pub fn done(&self, cfg: &EnvConfig) -> bool {
        self.success || self.step_count >= cfg.max_steps
    }
}

/// Furthest stage reached and the matching cumulative flags.
pub fn stage_of(state: &EpisodeState) -> StageReport {
    StageReport {
        stage: state.stage,
        flags: StageFlags::from_stage(state.stage),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub stage: Stage,
    pub flags: StageFlags,
    pub grasped: bool,
    pub released: bool,
    pub success: bool,
    pub timeout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Observation,
    pub done: bool,
    pub info: StepInfo,
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn heading(theta: f64) -> (f64, f64) {
    (theta.cos(), theta.sin())
}

/// Pose of a held object given the gripper pose and the grasp offset.
pub(crate) fn attach(g: &ProprioState, off: (f64, f64, f64)) -> Pose2 {
    let (c, s) = heading(g.theta);
    Pose2::new(
        clip01(g.x + c * off.0 - s * off.1),
        clip01(g.y + s * off.0 + c * off.1),
        wrap_angle(g.theta + off.2),
    )
}

/// Gripper pose that places a held object at `target`.
pub(crate) fn gripper_for(target: &Pose2, off: (f64, f64, f64), grip: f64) -> ProprioState {
    let theta = wrap_angle(target.theta - off.2);
    let (c, s) = heading(theta);
    ProprioState::new(
        target.x - (c * off.0 - s * off.1),
        target.y - (s * off.0 + c * off.1),
        theta,
        grip,
    )
}

fn offset_of(g: &ProprioState, o: &Pose2) -> (f64, f64, f64) {
    let (c, s) = heading(g.theta);
    let (dx, dy) = (o.x - g.x, o.y - g.y);
    (c * dx + s * dy, -s * dx + c * dy, wrap_angle(o.theta - g.theta))
}

/// One simulated episode.
#[derive(Debug, Clone)]
pub struct Env {
    pub cfg: EnvConfig,
    state: EpisodeState,
    noise_rng: ChaCha8Rng,
}

/// Sample a scene and return the environment with its first observation.
pub fn reset(cfg: &EnvConfig, seed: u64) -> (Env, Observation) {
    let env = Env::new(cfg.clone(), seed);
    let obs = env.observation();
    (env, obs)
}

impl Env {
    pub fn new(cfg: EnvConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = (cfg.margin, 1.0 - cfg.margin);
        let pose = |rng: &mut ChaCha8Rng| {
            Pose2::new(
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
                rng.random_range(-cfg.max_theta..=cfg.max_theta),
            )
        };
        let object_pose = pose(&mut rng);
        let slot_pose = loop {
            let s = pose(&mut rng);
            if s.distance_to(&object_pose) >= cfg.min_separation {
                break s;
            }
        };
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        Self {
            cfg,
            state: EpisodeState {
                proprio: HOME,
                object_pose,
                slot_pose,
                object_held: false,
                step_count: 0,
                stage: Stage::Reach,
                success: false,
                grasp_offset: None,
            },
            noise_rng,
        }
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn observation(&self) -> Observation {
        self.state.observation()
    }

    pub fn is_done(&self) -> bool {
        self.state.done(&self.cfg)
    }

    fn advance_stage(&mut self) {
        let s = &mut self.state;
        let mut stage = s.stage;
        if stage == Stage::Reach
            && (s.object_held || s.proprio.pose().distance_to(&s.object_pose) < STAGE_RADIUS)
        {
            stage = Stage::Grasp;
        }
        if stage == Stage::Grasp && s.object_held {
            stage = Stage::Transport;
        }
        if stage == Stage::Transport && s.object_held && s.object_pose.distance_to(&s.slot_pose) < STAGE_RADIUS {
            stage = Stage::Insert;
        }
        if s.success {
            stage = Stage::Done;
        }
        s.stage = stage.max(s.stage);
    }

    /// Apply one action. Gripper events are resolved at the current pose, then motion is integrated.
    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(HydraError::State("step called on a finished episode".into()));
        }
        let cfg = self.cfg.clone();
        let a = action.clamped(&cfg.caps);
        let s = &mut self.state;
        let (mut grasped, mut released) = (false, false);
        let was_closed = s.proprio.grip > 0.5;
        let closing = a.grip_cmd > 0.5;
        if closing && !was_closed && !s.object_held {
            let p = s.proprio.pose();
            if p.distance_to(&s.object_pose) <= cfg.grasp_tol_pos && p.angle_error(&s.object_pose) <= cfg.grasp_tol_theta {
                s.object_held = true;
                s.grasp_offset = Some(offset_of(&s.proprio, &s.object_pose));
                grasped = true;
            }
        } else if !closing && s.object_held {
            s.object_held = false;
            s.grasp_offset = None;
            released = true;
            if s.object_pose.distance_to(&s.slot_pose) <= cfg.insert_tol_pos
                && s.object_pose.angle_error(&s.slot_pose) <= cfg.insert_tol_theta
            {
                s.success = true;
            }
        }
        s.proprio.grip = a.grip_cmd;

        let (mut dx, mut dy, mut dth) = (a.dx, a.dy, a.dtheta);
        if cfg.system_noise > 0.0 && !s.success {
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            let (sx, sy, sth) = match cfg.noise_model {
                NoiseModel::Proportional => (dx.abs(), dy.abs(), dth.abs()),
                NoiseModel::Additive => (cfg.caps.dx, cfg.caps.dy, cfg.caps.dtheta),
            };
            dx += cfg.system_noise * sx * n.sample(&mut self.noise_rng);
            dy += cfg.system_noise * sy * n.sample(&mut self.noise_rng);
            dth += cfg.system_noise * sth * n.sample(&mut self.noise_rng);
        }
        if !s.success {
            s.proprio.x = clip01(s.proprio.x + dx);
            s.proprio.y = clip01(s.proprio.y + dy);
            s.proprio.theta = wrap_angle(s.proprio.theta + dth);
        }
        if let Some(off) = s.grasp_offset {
            s.object_pose = attach(&s.proprio, off);
        }
        s.step_count += 1;
        self.advance_stage();
        let s = &self.state;
        let timeout = !s.success && s.step_count >= cfg.max_steps;
        Ok(StepResult {
            obs: s.observation(),
            done: s.success || timeout,
            info: StepInfo {
                stage: s.stage,
                flags: StageFlags::from_stage(s.stage),
                grasped,
                released,
                success: s.success,
                timeout,
            },
        })
    }
}
