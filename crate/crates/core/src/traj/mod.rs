//! Demonstration data model and its on-disk layout.

mod io;
mod validate;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use io::{
    demo_ids, load_dataset, load_demo, load_labeled, save_dataset, save_demo, save_labeled, write_atomic, DEMOS_DIR,
    LABELED_DIR, MANIFEST_FILE,
};
pub use validate::{validate_demo, validate_demo_with, Violation};

/// Current on-disk schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Default control period in seconds (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

/// Wrap an angle to `(-pi, pi]`.
///
/// Values already in range are returned unchanged.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Robot proprioceptive state: planar end-effector pose plus gripper closure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProprioState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    /// 0 = open, 1 = closed.
    pub grip: f64,
}

impl ProprioState {
    pub fn new(x: f64, y: f64, theta: f64, grip: f64) -> Self {
        Self { x, y, theta, grip }
    }

    pub fn distance_to(&self, other: &ProprioState) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }
}

/// Planar pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn distance_to(&self, other: &Pose2) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Absolute shortest angular difference to `other`.
    pub fn angle_error(&self, other: &Pose2) -> f64 {
        wrap_angle(other.theta - self.theta).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvState {
    pub object_pose: Pose2,
    pub slot_pose: Pose2,
    pub object_held: bool,
}

/// Policy input: proprioception concatenated with environment state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub proprio: ProprioState,
    pub env: EnvState,
}

/// Per-step displacement command plus an absolute gripper command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub grip_cmd: f64,
}

impl Action {
    pub fn new(dx: f64, dy: f64, dtheta: f64, grip_cmd: f64) -> Self {
        Self {
            dx,
            dy,
            dtheta,
            grip_cmd,
        }
    }

    /// Zero motion, gripper held at `grip`.
    pub fn hold(grip: f64) -> Self {
        Self::new(0.0, 0.0, 0.0, grip)
    }

    pub fn clamped(&self, caps: &ActionCaps) -> Action {
        Action {
            dx: self.dx.clamp(-caps.dx, caps.dx),
            dy: self.dy.clamp(-caps.dy, caps.dy),
            dtheta: self.dtheta.clamp(-caps.dtheta, caps.dtheta),
            grip_cmd: self.grip_cmd.clamp(0.0, 1.0),
        }
    }
}

/// Per-axis magnitude limits on a single action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCaps {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Default for ActionCaps {
    fn default() -> Self {
        Self {
            dx: 0.05,
            dy: 0.05,
            dtheta: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Observation,
    pub action: Action,
    pub click: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub dt: f64,
    pub steps: Vec<Step>,
    pub meta: BTreeMap<String, String>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clicks(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.click).collect()
    }

    pub fn proprio(&self) -> Vec<ProprioState> {
        self.steps.iter().map(|s| s.obs.proprio).collect()
    }

    pub fn set_clicks(&mut self, clicks: &[bool]) {
        for (s, &c) in self.steps.iter_mut().zip(clicks) {
            s.click = c;
        }
    }
}

/// Sparse (waypoint) or dense (low-level action) operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Sparse,
    Dense,
}

impl Mode {
    pub fn bit(self) -> u8 {
        match self {
            Mode::Sparse => 0,
            Mode::Dense => 1,
        }
    }

    pub fn from_bit(b: bool) -> Mode {
        if b {
            Mode::Dense
        } else {
            Mode::Sparse
        }
    }

    pub fn is_dense(self) -> bool {
        self == Mode::Dense
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Mode::Sparse),
            1 => Ok(Mode::Dense),
            other => Err(serde::de::Error::custom(format!(
                "mode must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// One processed training tuple `(o, a, w, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStep {
    pub obs: Observation,
    pub action: Action,
    pub waypoint: ProprioState,
    pub mode: Mode,
    pub relabeled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub demos: Vec<Demonstration>,
    /// Index-aligned with `demos` when present.
    pub labeled: Option<Vec<Vec<LabeledStep>>>,
    pub schema_version: u32,
}

impl Default for Dataset {
    fn default() -> Self {
        Self {
            demos: Vec::new(),
            labeled: None,
            schema_version: SCHEMA_VERSION,
        }
    }
}

impl Dataset {
    pub fn new(demos: Vec<Demonstration>) -> Self {
        Self {
            demos,
            ..Default::default()
        }
    }

    pub fn with_labels(mut self, labeled: Vec<Vec<LabeledStep>>) -> Self {
        self.labeled = Some(labeled);
        self
    }

    /// Check the alignment invariant between `demos` and `labeled`.
    pub fn check_alignment(&self) -> crate::Result<()> {
        if let Some(labeled) = &self.labeled {
            if labeled.len() != self.demos.len() {
                return Err(crate::HydraError::validation(format!(
                    "labeled block has {} entries for {} demos",
                    labeled.len(),
                    self.demos.len()
                )));
            }
            for (demo, steps) in self.demos.iter().zip(labeled) {
                if steps.len() != demo.steps.len() {
                    return Err(crate::HydraError::validation(format!(
                        "demo {}: {} labeled steps for {} demo steps",
                        demo.id,
                        steps.len(),
                        demo.steps.len()
                    )));
                }
            }
        }
        Ok(())
    }
}
