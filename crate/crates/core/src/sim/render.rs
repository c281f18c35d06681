//! Scene primitives for drawing a frame.
//!
//! ```json
//! [{"kind": "slot", "x": 0.2, "y": 0.8, "theta": -0.3, "size": 0.05},
//!  {"kind": "object", "x": 0.7, "y": 0.3, "theta": 0.2, "size": 0.04},
//!  {"kind": "gripper", "x": 0.5, "y": 0.1, "theta": 0.0, "size": 0.05, "grip": 0.0}]
//! ```
//!
//! Sizes are side lengths in workspace meters; the gripper triangle points along `theta`.

use serde::{Deserialize, Serialize};

use crate::traj::Observation;

pub const GRIPPER_SIZE: f64 = 0.05;
pub const OBJECT_SIZE: f64 = 0.04;
pub const SLOT_SIZE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Slot,
    Object,
    Gripper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub size: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grip: Option<f64>,
}

/// Primitives in draw order: slot outline, object, gripper.
pub fn render_frame(obs: &Observation) -> Vec<Primitive> {
    let s = obs.env.slot_pose;
    let o = obs.env.object_pose;
    let p = obs.proprio;
    vec![
        Primitive { kind: PrimitiveKind::Slot, x: s.x, y: s.y, theta: s.theta, size: SLOT_SIZE, grip: None },
        Primitive { kind: PrimitiveKind::Object, x: o.x, y: o.y, theta: o.theta, size: OBJECT_SIZE, grip: None },
        Primitive { kind: PrimitiveKind::Gripper, x: p.x, y: p.y, theta: p.theta, size: GRIPPER_SIZE, grip: Some(p.grip) },
    ]
}
