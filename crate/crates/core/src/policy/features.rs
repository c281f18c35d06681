//! Fixed encodings between the data model and network space.

use crate::scalar::Scalar;
use crate::traj::{wrap_angle, Action, ActionCaps, Observation, ProprioState};

pub const OBS_DIM: usize = 20;
pub const ACTION_DIM: usize = 4;
pub const WAYPOINT_DIM: usize = 4;

/// Gain on gripper-relative offsets, so centimeter gaps are visible to the networks.
const REL_SCALE: f64 = 5.0;

#[inline]
fn centered(v: f64) -> f64 {
    (v - 0.5) * 2.0
}

/// Absolute poses of gripper, object and slot (headings as cos/sin), the held
/// flag, then object-from-gripper and slot-from-object offsets.
pub fn encode_obs<S: Scalar>(obs: &Observation) -> [S; OBS_DIM] {
    let p = &obs.proprio;
    let o = &obs.env.object_pose;
    let s = &obs.env.slot_pose;
    [
        centered(p.x),
        centered(p.y),
        p.theta.cos(),
        p.theta.sin(),
        p.grip,
        centered(o.x),
        centered(o.y),
        o.theta.cos(),
        o.theta.sin(),
        centered(s.x),
        centered(s.y),
        s.theta.cos(),
        s.theta.sin(),
        if obs.env.object_held { 1.0 } else { 0.0 },
        (o.x - p.x) * REL_SCALE,
        (o.y - p.y) * REL_SCALE,
        wrap_angle(o.theta - p.theta),
        (s.x - o.x) * REL_SCALE,
        (s.y - o.y) * REL_SCALE,
        wrap_angle(s.theta - o.theta),
    ]
    .map(S::lit)
}

/// Actions are scaled by their caps so every component lives in roughly [-1, 1].
pub fn encode_action<S: Scalar>(a: &Action, caps: &ActionCaps) -> [S; ACTION_DIM] {
    [a.dx / caps.dx, a.dy / caps.dy, a.dtheta / caps.dtheta, a.grip_cmd].map(S::lit)
}

pub fn decode_action<S: Scalar>(v: &[S], caps: &ActionCaps) -> Action {
    Action::new(
        v[0].as_f64() * caps.dx,
        v[1].as_f64() * caps.dy,
        v[2].as_f64() * caps.dtheta,
        v[3].as_f64().clamp(0.0, 1.0),
    )
    .clamped(caps)
}

/// Waypoints are expressed relative to the current proprio state `p`.
pub fn encode_waypoint<S: Scalar>(w: &ProprioState, p: &ProprioState) -> [S; WAYPOINT_DIM] {
    [
        (w.x - p.x) * REL_SCALE,
        (w.y - p.y) * REL_SCALE,
        wrap_angle(w.theta - p.theta),
        w.grip,
    ]
    .map(S::lit)
}

pub fn decode_waypoint<S: Scalar>(v: &[S], p: &ProprioState) -> ProprioState {
    ProprioState::new(
        p.x + v[0].as_f64() / REL_SCALE,
        p.y + v[1].as_f64() / REL_SCALE,
        wrap_angle(p.theta + v[2].as_f64()),
        v[3].as_f64().clamp(0.0, 1.0),
    )
}
