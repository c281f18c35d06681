use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use super::{ActionCaps, Demonstration, Pose2};

/// One broken invariant in a demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// `None` for whole-demo rules such as minimum length.
    pub step: Option<usize>,
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn at(step: usize, field: &str, rule: &str) -> Self {
        Self {
            step: Some(step),
            field: field.to_string(),
            rule: rule.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(s) => write!(f, "step {s}: {} {}", self.field, self.rule),
            None => write!(f, "{} {}", self.field, self.rule),
        }
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn theta_ok(t: f64) -> bool {
    t > -PI && t <= PI
}

fn check_pose(out: &mut Vec<Violation>, step: usize, name: &str, p: &Pose2) {
    if !(p.x.is_finite() && p.y.is_finite() && p.theta.is_finite()) {
        out.push(Violation::at(step, name, "non-finite"));
        return;
    }
    if !in_unit(p.x) || !in_unit(p.y) {
        out.push(Violation::at(step, name, "outside workspace"));
    }
    if !theta_ok(p.theta) {
        out.push(Violation::at(step, name, "theta out of range"));
    }
}

/// Validate against the default action caps.
pub fn validate_demo(demo: &Demonstration) -> Vec<Violation> {
    validate_demo_with(demo, &ActionCaps::default())
}

pub fn validate_demo_with(demo: &Demonstration, caps: &ActionCaps) -> Vec<Violation> {
    let mut out = Vec::new();
    if demo.steps.len() < 2 {
        out.push(Violation {
            step: None,
            field: "steps".into(),
            rule: "length ≥ 2".into(),
        });
    }
    if !(demo.dt.is_finite() && demo.dt > 0.0) {
        out.push(Violation {
            step: None,
            field: "dt".into(),
            rule: "positive".into(),
        });
    }
    for (i, step) in demo.steps.iter().enumerate() {
        let p = &step.obs.proprio;
        if !(p.x.is_finite() && p.y.is_finite() && p.theta.is_finite() && p.grip.is_finite()) {
            out.push(Violation::at(i, "proprio", "non-finite"));
        } else {
            if !in_unit(p.x) {
                out.push(Violation::at(i, "x", "outside workspace"));
            }
            if !in_unit(p.y) {
                out.push(Violation::at(i, "y", "outside workspace"));
            }
            if !theta_ok(p.theta) {
                out.push(Violation::at(i, "theta", "theta out of range"));
            }
            if !in_unit(p.grip) {
                out.push(Violation::at(i, "grip", "outside [0,1]"));
            }
        }
        check_pose(&mut out, i, "object_pose", &step.obs.env.object_pose);
        check_pose(&mut out, i, "slot_pose", &step.obs.env.slot_pose);

        let a = &step.action;
        for (name, v, cap) in [
            ("dx", a.dx, caps.dx),
            ("dy", a.dy, caps.dy),
            ("dtheta", a.dtheta, caps.dtheta),
        ] {
            if !v.is_finite() {
                out.push(Violation::at(i, name, "non-finite"));
            } else if v.abs() > cap + 1e-12 {
                out.push(Violation::at(i, name, "cap"));
            }
        }
        if !a.grip_cmd.is_finite() || !in_unit(a.grip_cmd) {
            out.push(Violation::at(i, "grip_cmd", "outside [0,1]"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::traj::{Action, Observation, Step};

    fn demo(n: usize) -> Demonstration {
        let steps = (0..n)
            .map(|i| {
                let mut obs = Observation::default();
                obs.proprio.x = 0.1 + 0.01 * i as f64;
                Step {
                    obs,
                    action: Action::new(0.01, 0.0, 0.0, 0.0),
                    click: false,
                }
            })
            .collect();
        Demonstration {
            id: "d".into(),
            dt: 0.1,
            steps,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn well_formed_is_clean() {
        assert!(validate_demo(&demo(10)).is_empty());
    }

    #[test]
    fn dx_over_cap() {
        let mut d = demo(10);
        d.steps[4].action.dx = 0.2;
        let v = validate_demo(&d);
        assert_eq!(v, vec![Violation::at(4, "dx", "cap")]);
    }

    #[test]
    fn too_short() {
        let v = validate_demo(&demo(1));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "length ≥ 2");
        assert_eq!(v[0].step, None);
    }

    #[test]
    fn unwrapped_theta() {
        let mut d = demo(3);
        d.steps[2].obs.proprio.theta = 4.0;
        let v = validate_demo(&d);
        assert_eq!(v, vec![Violation::at(2, "theta", "theta out of range")]);
    }
}
