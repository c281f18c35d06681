//! Click traces to modes, waypoints and relabeled actions.
//!
//! A single isolated click marks the state that ends a sparse segment; a
//! sustained run of clicks marks a dense segment. Steps before the first
//! click of a run target the clicked state. Dense steps target the next
//! state. Conventions at the edges:
//!
//! * clicks outside the trace count as unclicked;
//! * a dense-start step also targets the next state;
//! * the final dense step targets the final state;
//! * a trailing sparse segment with no closing click targets the final state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{waypoint_action, ControllerConfig};
use crate::traj::{wrap_angle, Demonstration, LabeledStep, Mode, ProprioState};
use crate::{HydraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Sparse,
    Dense,
}

/// A half-open run `[start, end)` of steps sharing a mode and a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub modes: Vec<Mode>,
    pub waypoints: Vec<ProprioState>,
    /// Index of the state each step's waypoint was taken from.
    pub targets: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl Segmentation {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Smoothed dense-mode probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTargets {
    pub probs: Vec<f64>,
}

/// `m_t = c_t AND (c_{t-1} OR c_{t+1})`.
pub fn dense_mask(clicks: &[bool]) -> Vec<bool> {
    let n = clicks.len();
    (0..n)
        .map(|t| {
            let prev = t > 0 && clicks[t - 1];
            let next = t + 1 < n && clicks[t + 1];
            clicks[t] && (prev || next)
        })
        .collect()
}

fn build_segments(modes: &[Mode], targets: &[usize]) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    for t in 0..modes.len() {
        let kind = match modes[t] {
            Mode::Sparse => SegmentKind::Sparse,
            Mode::Dense => SegmentKind::Dense,
        };
        let extend = match segments.last() {
            Some(seg) if seg.kind == kind => match kind {
                SegmentKind::Dense => true,
                SegmentKind::Sparse => targets[seg.start] == targets[t],
            },
            _ => false,
        };
        if extend {
            segments.last_mut().expect("non-empty").end = t + 1;
        } else {
            segments.push(Segment {
                kind,
                start: t,
                end: t + 1,
            });
        }
    }
    segments
}

/// Segment a click-annotated demonstration into modes and per-step waypoints.
pub fn label_modes(clicks: &[bool], proprio: &[ProprioState]) -> Result<Segmentation> {
    let n = clicks.len();
    if n != proprio.len() {
        return Err(HydraError::validation(format!(
            "click trace length {n} does not match demo length {}",
            proprio.len()
        )));
    }
    if n < 2 {
        return Err(HydraError::validation("demo length must be ≥ 2"));
    }
    let dense = dense_mask(clicks);
    let mut targets = vec![usize::MAX; n];
    // first step still waiting for a sparse waypoint
    let mut pending = 0usize;
    for t in 0..n {
        let prev = t > 0 && clicks[t - 1];
        let next = t + 1 < n && clicks[t + 1];
        let isolated = !prev && clicks[t] && !next;
        let dense_start = !prev && dense[t];
        if isolated || dense_start {
            for slot in &mut targets[pending..t] {
                *slot = t;
            }
            pending = t;
        }
        if dense[t] {
            targets[t] = (t + 1).min(n - 1);
            pending = t + 1;
        }
    }
    for slot in &mut targets[pending.min(n)..] {
        *slot = n - 1;
    }
    let modes: Vec<Mode> = dense.iter().map(|&d| Mode::from_bit(d)).collect();
    let waypoints = targets.iter().map(|&i| proprio[i]).collect();
    let segments = build_segments(&modes, &targets);
    Ok(Segmentation {
        modes,
        waypoints,
        targets,
        segments,
    })
}

/// Zero-padded moving average of the mode bits with an odd kernel `n`.
pub fn smooth_modes(modes: &[Mode], n: usize) -> Result<ModeTargets> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(HydraError::validation(format!(
            "smoothing kernel must be odd and ≥ 1, got {n}"
        )));
    }
    if n > modes.len() {
        return Err(HydraError::validation(format!(
            "smoothing kernel {n} longer than sequence of {}",
            modes.len()
        )));
    }
    let bits: Vec<f64> = modes.iter().map(|m| f64::from(m.bit())).collect();
    Ok(ModeTargets {
        probs: moving_average(&bits, n),
    })
}

/// Centered, same-length, zero-padded moving average.
pub fn moving_average(xs: &[f64], n: usize) -> Vec<f64> {
    let r = n / 2;
    let len = xs.len();
    (0..len)
        .map(|t| {
            let lo = t.saturating_sub(r);
            let hi = (t + r + 1).min(len);
            xs[lo..hi].iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// Replace sparse-step actions with the controller's action toward the step's waypoint.
pub fn relabel_sparse_actions(
    demo: &Demonstration,
    seg: &Segmentation,
    ctrl: &ControllerConfig,
) -> Vec<LabeledStep> {
    assemble(demo, seg, Some(ctrl))
}

/// Attach modes and waypoints while keeping every recorded action.
pub fn attach_labels(demo: &Demonstration, seg: &Segmentation) -> Vec<LabeledStep> {
    assemble(demo, seg, None)
}

fn assemble(
    demo: &Demonstration,
    seg: &Segmentation,
    ctrl: Option<&ControllerConfig>,
) -> Vec<LabeledStep> {
    demo.steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let mode = seg.modes[t];
            let waypoint = seg.waypoints[t];
            match (mode, ctrl) {
                (Mode::Sparse, Some(ctrl)) => LabeledStep {
                    obs: step.obs,
                    action: waypoint_action(&step.obs.proprio, &waypoint, ctrl),
                    waypoint,
                    mode,
                    relabeled: true,
                },
                _ => LabeledStep {
                    obs: step.obs,
                    action: step.action,
                    waypoint,
                    mode,
                    relabeled: false,
                },
            }
        })
        .collect()
}

/// Promote `extra` evenly spaced states inside each sparse segment to waypoints.
pub fn add_intermediate_waypoints(
    seg: &Segmentation,
    proprio: &[ProprioState],
    extra: usize,
) -> Segmentation {
    if extra == 0 {
        return seg.clone();
    }
    let mut targets = seg.targets.clone();
    for s in seg.segments.iter().filter(|s| s.kind == SegmentKind::Sparse) {
        let goal = seg.targets[s.start];
        let span = goal.saturating_sub(s.start);
        let mut cuts: Vec<usize> = (1..=extra)
            .map(|k| s.start + k * span / (extra + 1))
            .filter(|&c| c > s.start && c < goal)
            .collect();
        cuts.dedup();
        cuts.push(goal);
        let mut from = s.start;
        for &cut in &cuts {
            let to = cut.min(s.end);
            for slot in &mut targets[from..to] {
                *slot = cut;
            }
            from = to;
        }
    }
    let waypoints = targets.iter().map(|&i| proprio[i]).collect();
    let segments = build_segments(&seg.modes, &targets);
    Segmentation {
        modes: seg.modes.clone(),
        waypoints,
        targets,
        segments,
    }
}

/// Jitter the proprio state of sparse steps and recompute their actions.
///
/// Dense steps pass through untouched.
pub fn augment_sparse_states(
    labeled: &[LabeledStep],
    sigma: f64,
    seed: u64,
    ctrl: &ControllerConfig,
) -> Result<Vec<LabeledStep>> {
    if !(sigma >= 0.0) {
        return Err(HydraError::validation("augmentation sigma must be ≥ 0"));
    }
    if sigma == 0.0 {
        return Ok(labeled.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    Ok(labeled
        .iter()
        .map(|step| {
            if step.mode.is_dense() {
                return step.clone();
            }
            let mut out = step.clone();
            let p = &mut out.obs.proprio;
            p.x = (p.x + noise.sample(&mut rng)).clamp(0.0, 1.0);
            p.y = (p.y + noise.sample(&mut rng)).clamp(0.0, 1.0);
            p.theta = wrap_angle(p.theta + noise.sample(&mut rng));
            if out.obs.env.object_held {
                let (dx, dy, dt) = (p.x - step.obs.proprio.x, p.y - step.obs.proprio.y, p.theta - step.obs.proprio.theta);
                let o = &mut out.obs.env.object_pose;
                o.x = (o.x + dx).clamp(0.0, 1.0);
                o.y = (o.y + dy).clamp(0.0, 1.0);
                o.theta = wrap_angle(o.theta + dt);
            }
            out.action = waypoint_action(&out.obs.proprio, &out.waypoint, ctrl);
            out.relabeled = true;
            out
        })
        .collect())
}
