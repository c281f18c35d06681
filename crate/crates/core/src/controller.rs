//! Saturating straight-line waypoint servo.

use serde::{Deserialize, Serialize};

use crate::traj::{wrap_angle, Action, ProprioState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Translational speed limit, m/s.
    pub v_max: f64,
    /// Rotational speed limit, rad/s.
    pub w_max: f64,
    pub eps_pos: f64,
    pub eps_theta: f64,
    /// Seconds before an unreached waypoint is abandoned.
    pub timeout: f64,
    pub dt: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            w_max: 2.0,
            eps_pos: 0.01,
            eps_theta: 0.05,
            timeout: 5.0,
            dt: 0.1,
        }
    }
}

impl ControllerConfig {
    /// Largest translation per step.
    pub fn step_len(&self) -> f64 {
        self.v_max * self.dt
    }

    /// Largest rotation per step.
    pub fn step_rot(&self) -> f64 {
        self.w_max * self.dt
    }
}

/// One bounded step from `p` toward `w`.
///
/// Translation moves straight at `min(distance, v_max * dt)`; rotation takes
/// the shortest way clamped to `w_max * dt`; the gripper is commanded to
/// `w.grip` directly.
pub fn waypoint_action(p: &ProprioState, w: &ProprioState, cfg: &ControllerConfig) -> Action {
    let (ex, ey) = (w.x - p.x, w.y - p.y);
    let dist = ex.hypot(ey);
    let step = cfg.step_len();
    let (dx, dy) = if dist <= step {
        (ex, ey)
    } else {
        let s = step / dist;
        (ex * s, ey * s)
    };
    let rot = cfg.step_rot();
    let dtheta = wrap_angle(w.theta - p.theta).clamp(-rot, rot);
    Action::new(dx, dy, dtheta, w.grip)
}

/// Position and heading inside tolerance; grip is ignored.
pub fn is_reached(p: &ProprioState, w: &ProprioState, cfg: &ControllerConfig) -> bool {
    p.distance_to(w) < cfg.eps_pos && wrap_angle(w.theta - p.theta).abs() < cfg.eps_theta
}

pub fn timeout_steps(cfg: &ControllerConfig) -> usize {
    // guard against 5.0 / 0.1 landing a hair under 50
    let n = (cfg.timeout / cfg.dt + 1e-9).floor();
    if n <= 0.0 {
        0
    } else {
        n as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ps(x: f64, y: f64, t: f64, g: f64) -> ProprioState {
        ProprioState::new(x, y, t, g)
    }

    #[test]
    fn straight_line_at_cap() {
        let a = waypoint_action(&ps(0.0, 0.0, 0.0, 0.0), &ps(1.0, 0.0, 0.0, 0.0), &Default::default());
        assert_eq!(a, Action::new(0.05, 0.0, 0.0, 0.0));
    }

    #[test]
    fn reached_gives_zero_action() {
        let p = ps(0.4, 0.2, 0.1, 0.7);
        let a = waypoint_action(&p, &p, &Default::default());
        assert_eq!(a, Action::new(0.0, 0.0, 0.0, 0.7));
    }

    #[test]
    fn rotation_through_wrap() {
        let deg = PI / 180.0;
        let a = waypoint_action(
            &ps(0.5, 0.5, 170.0 * deg, 0.0),
            &ps(0.5, 0.5, -170.0 * deg, 0.0),
            &Default::default(),
        );
        assert!((a.dtheta - 0.2).abs() < 1e-12);
    }

    #[test]
    fn reach_tolerances() {
        let cfg = ControllerConfig::default();
        let w = ps(0.5, 0.5, 0.0, 0.0);
        assert!(is_reached(&w, &w, &cfg));
        assert!(is_reached(&ps(0.509, 0.5, 0.04, 1.0), &w, &cfg));
        assert!(!is_reached(&ps(0.509, 0.5, 0.2, 0.0), &w, &cfg));
    }

    #[test]
    fn timeouts() {
        assert_eq!(timeout_steps(&ControllerConfig::default()), 50);
        let c = ControllerConfig {
            timeout: 1.0,
            ..Default::default()
        };
        assert_eq!(timeout_steps(&c), 10);
        let c = ControllerConfig {
            timeout: 0.05,
            ..Default::default()
        };
        assert_eq!(timeout_steps(&c), 0);
    }

    #[test]
    fn saturation() {
        let cfg = ControllerConfig::default();
        let p = ps(0.1, 0.1, 0.0, 0.0);
        let a1 = waypoint_action(&p, &ps(0.4, 0.5, 0.0, 0.0), &cfg);
        let a2 = waypoint_action(&p, &ps(0.7, 0.9, 0.0, 0.0), &cfg);
        assert!((a1.dx - a2.dx).abs() < 1e-15 && (a1.dy - a2.dy).abs() < 1e-15);
    }
}
