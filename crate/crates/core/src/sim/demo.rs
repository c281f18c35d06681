//! Scripted five-phase demonstrator that clicks while it works.
//!
//! Phases: reach a pre-grasp pose (sparse, jittered arc), approach and close
//! on the object (dense), carry to a staging pose before the slot (sparse),
//! line up at a pre-insert pose (sparse), slide in and release (dense). Sparse segments end with one
//! isolated click; dense phases are clicked throughout. Arriving before a
//! dense phase, the demonstrator settles for two still steps so the click
//! stays isolated from the following run.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gripper_for, offset_of, EnvConfig, Env};
use crate::segmenter::{Segment, SegmentKind};
use crate::traj::{wrap_angle, Action, Demonstration, Observation, Pose2, ProprioState, Step};
use crate::{HydraError, Result};

/// Meta key holding the script's own segment partition.
pub const PHASES_META_KEY: &str = "phases";

const PRE_GRASP_DIST: f64 = 0.04;
const PRE_INSERT_DIST: f64 = 0.04;
/// Distance in front of the slot where the carried object is staged before insertion.
const STAGING_DIST: f64 = 0.15;
const DENSE_SPEED: f64 = 0.008;
const SETTLE_STEPS: usize = 2;
const PHASE_STEP_LIMIT: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Scale of the random arc added to free-space motion, in meters.
    pub sparse_jitter_sigma: f64,
    /// Dense motions run at `DENSE_SPEED / dense_slowdown` per step.
    pub dense_slowdown: f64,
    /// Std of where the demonstrator stops before a dense phase, around the ideal pose.
    pub arrival_sigma_pos: f64,
    pub arrival_sigma_theta: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            sparse_jitter_sigma: 0.04,
            dense_slowdown: 1.0,
            arrival_sigma_pos: 0.006,
            arrival_sigma_theta: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    start: ProprioState,
    goal: ProprioState,
    lateral: (f64, f64),
    twist: f64,
    pace: f64,
    k: usize,
}

impl Arc {
    fn action(&mut self, p: &ProprioState, step_len: f64, step_rot: f64) -> Action {
        let (dx, dy) = (self.goal.x - self.start.x, self.goal.y - self.start.y);
        let len = dx.hypot(dy);
        self.k += 1;
        let s = if len < 1e-12 {
            1.0
        } else {
            (self.k as f64 * self.pace * step_len / len).min(1.0)
        };
        let (nx, ny) = if len < 1e-12 { (0.0, 0.0) } else { (-dy / len, dx / len) };
        let off = self.lateral.0 * (PI * s).sin() + self.lateral.1 * (2.0 * PI * s).sin();
        let qx = self.start.x + s * dx + off * nx;
        let qy = self.start.y + s * dy + off * ny;
        let (mut mx, mut my) = (qx - p.x, qy - p.y);
        let d = mx.hypot(my);
        if d > step_len {
            mx *= step_len / d;
            my *= step_len / d;
        }
        let target_theta = self.goal.theta + self.twist * (PI * s).sin();
        let dth = wrap_angle(target_theta - p.theta).clamp(-step_rot, step_rot);
        Action::new(mx, my, dth, self.goal.grip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Plan {
    PreGrasp,
    SettleGrasp(usize),
    GraspApproach,
    Close(usize),
    Lift,
    PreInsert,
    SettleInsert(usize),
    InsertApproach,
    Release(usize),
    Finished,
}

/// Segment tag for the step a plan emits.
fn tag(plan: Plan) -> (SegmentKind, u8) {
    match plan {
        Plan::PreGrasp => (SegmentKind::Sparse, 0),
        Plan::SettleGrasp(_) => (SegmentKind::Sparse, 1),
        Plan::GraspApproach | Plan::Close(_) => (SegmentKind::Dense, 2),
        Plan::Lift => (SegmentKind::Sparse, 3),
        Plan::PreInsert => (SegmentKind::Sparse, 4),
        Plan::SettleInsert(_) => (SegmentKind::Sparse, 5),
        Plan::InsertApproach | Plan::Release(_) => (SegmentKind::Dense, 6),
        Plan::Finished => (SegmentKind::Sparse, 7),
    }
}

/// Closed-loop scripted expert. Each call to [`Demonstrator::act`] returns the
/// action for the given observation and whether the step is clicked.
#[derive(Debug, Clone)]
pub struct Demonstrator {
    cfg: EnvConfig,
    profile: NoiseProfile,
    rng: ChaCha8Rng,
    plan: Plan,
    arc: Option<Arc>,
    phase_steps: usize,
    tags: Vec<(SegmentKind, u8)>,
}

impl Demonstrator {
    pub fn new(cfg: &EnvConfig, profile: &NoiseProfile, episode_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        rng.set_stream(episode_seed);
        Self {
            cfg: cfg.clone(),
            profile: *profile,
            rng,
            plan: Plan::PreGrasp,
            arc: None,
            phase_steps: 0,
            tags: Vec::new(),
        }
    }

    fn step_len(&self) -> f64 {
        self.cfg.caps.dx.min(self.cfg.caps.dy)
    }

    fn arrive_tol(&self) -> (f64, f64) {
        if self.cfg.system_noise > 0.0 {
            (0.4 * self.cfg.insert_tol_pos, 0.4 * self.cfg.insert_tol_theta)
        } else {
            (1e-9, 1e-9)
        }
    }

    fn arrived(&self, p: &ProprioState, goal: &ProprioState) -> bool {
        let (tp, tr) = self.arrive_tol();
        p.distance_to(goal) < tp && wrap_angle(goal.theta - p.theta).abs() < tr
    }

    /// Where a human would actually stop before a dense phase: near the ideal pose, not on it.
    fn imprecise(&mut self, goal: ProprioState) -> ProprioState {
        let (sp, sr) = (self.profile.arrival_sigma_pos, self.profile.arrival_sigma_theta);
        if sp <= 0.0 && sr <= 0.0 {
            return goal;
        }
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let dx = sp * n.sample(&mut self.rng);
        let dy = sp * n.sample(&mut self.rng);
        let dth = sr * n.sample(&mut self.rng);
        ProprioState::new(
            (goal.x + dx).clamp(0.0, 1.0),
            (goal.y + dy).clamp(0.0, 1.0),
            wrap_angle(goal.theta + dth),
            goal.grip,
        )
    }

    fn new_arc(&mut self, start: ProprioState, goal: ProprioState) -> Arc {
        let s = self.profile.sparse_jitter_sigma;
        let (lateral, twist, pace) = if s > 0.0 {
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            let mut draw = || n.sample(&mut self.rng);
            let lateral = (s * draw(), 0.5 * s * draw());
            let twist = 3.0 * s * draw();
            let pace = 1.0 - (4.0 * s * draw()).abs().min(0.5);
            (lateral, twist, pace)
        } else {
            ((0.0, 0.0), 0.0, 1.0)
        };
        Arc {
            start,
            goal,
            lateral,
            twist,
            pace,
            k: 0,
        }
    }

    fn dense_step(&self, p: &ProprioState, goal: &ProprioState) -> Action {
        let speed = DENSE_SPEED / self.profile.dense_slowdown.max(1e-9);
        let (dx, dy) = (goal.x - p.x, goal.y - p.y);
        let d = dx.hypot(dy);
        let k = if d <= speed * (1.0 + 1e-9) { 1.0 } else { speed / d };
        let rot = self.cfg.caps.dtheta;
        Action::new(dx * k, dy * k, wrap_angle(goal.theta - p.theta).clamp(-rot, rot), goal.grip)
    }

    fn enter(&mut self, plan: Plan) {
        self.plan = plan;
        self.arc = None;
        self.phase_steps = 0;
    }

    /// Next action and click bit. Fails if a phase overruns its step budget.
    pub fn act(&mut self, obs: &Observation) -> Result<(Action, bool)> {
        let p = obs.proprio;
        let mut click = false;
        loop {
            self.phase_steps += 1;
            if self.phase_steps > PHASE_STEP_LIMIT {
                return Err(HydraError::Generation(format!("phase {:?} did not converge", self.plan)));
            }
            let plan = self.plan;
            let out = match plan {
                Plan::PreGrasp | Plan::Lift | Plan::PreInsert => {
                    if self.arc.is_none() {
                        let mut goal = self.sparse_goal(plan, obs);
                        if plan != Plan::Lift {
                            goal = self.imprecise(goal);
                        }
                        self.arc = Some(self.new_arc(p, goal));
                    }
                    let goal = self.arc.expect("arc set").goal;
                    if self.arrived(&p, &goal) {
                        click = true;
                        self.enter(match plan {
                            Plan::PreGrasp => Plan::SettleGrasp(SETTLE_STEPS),
                            Plan::Lift => Plan::PreInsert,
                            _ => Plan::SettleInsert(SETTLE_STEPS),
                        });
                        continue;
                    }
                    let (len, rot) = (self.step_len(), self.cfg.caps.dtheta);
                    let arc = self.arc.as_mut().expect("arc set");
                    arc.action(&p, len, rot)
                }
                Plan::SettleGrasp(n) | Plan::SettleInsert(n) => {
                    if n == 0 {
                        self.enter(if matches!(plan, Plan::SettleGrasp(_)) {
                            Plan::GraspApproach
                        } else {
                            Plan::InsertApproach
                        });
                        continue;
                    }
                    self.plan = match plan {
                        Plan::SettleGrasp(_) => Plan::SettleGrasp(n - 1),
                        _ => Plan::SettleInsert(n - 1),
                    };
                    self.tags.push(tag(plan));
                    return Ok((Action::hold(p.grip), click));
                }
                Plan::GraspApproach | Plan::InsertApproach => {
                    let goal = if plan == Plan::GraspApproach {
                        let o = obs.env.object_pose;
                        ProprioState::new(o.x, o.y, o.theta, 0.0)
                    } else {
                        let off = offset_of(&p, &obs.env.object_pose);
                        gripper_for(&obs.env.slot_pose, off, 1.0)
                    };
                    if self.arrived(&p, &goal) {
                        self.enter(if plan == Plan::GraspApproach {
                            Plan::Close(2)
                        } else {
                            Plan::Release(1)
                        });
                        continue;
                    }
                    click = true;
                    self.dense_step(&p, &goal)
                }
                Plan::Close(n) | Plan::Release(n) => {
                    if n == 0 {
                        self.enter(if matches!(plan, Plan::Close(_)) { Plan::Lift } else { Plan::Finished });
                        continue;
                    }
                    let (cmd, next) = match plan {
                        Plan::Close(_) => (1.0, Plan::Close(n - 1)),
                        _ => (0.0, Plan::Release(n - 1)),
                    };
                    self.plan = next;
                    self.tags.push(tag(plan));
                    return Ok((Action::hold(cmd), true));
                }
                Plan::Finished => Action::hold(p.grip),
            };
            self.tags.push(tag(plan));
            return Ok((out, click));
        }
    }

    fn sparse_goal(&self, plan: Plan, obs: &Observation) -> ProprioState {
        let p = obs.proprio;
        match plan {
            Plan::PreGrasp => {
                let o = obs.env.object_pose;
                ProprioState::new(
                    o.x - PRE_GRASP_DIST * o.theta.cos(),
                    o.y - PRE_GRASP_DIST * o.theta.sin(),
                    o.theta,
                    0.0,
                )
            }
            Plan::Lift => {
                let s = obs.env.slot_pose;
                let target = Pose2::new(
                    s.x - STAGING_DIST * s.theta.cos(),
                    s.y - STAGING_DIST * s.theta.sin(),
                    s.theta,
                );
                let g = gripper_for(&target, offset_of(&p, &obs.env.object_pose), 1.0);
                ProprioState::new(g.x.clamp(0.0, 1.0), g.y.clamp(0.0, 1.0), g.theta, 1.0)
            }
            _ => {
                let s = obs.env.slot_pose;
                let target = Pose2::new(
                    s.x - PRE_INSERT_DIST * s.theta.cos(),
                    s.y - PRE_INSERT_DIST * s.theta.sin(),
                    s.theta,
                );
                gripper_for(&target, offset_of(&p, &obs.env.object_pose), 1.0)
            }
        }
    }

    /// Segment partition of the steps emitted so far.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out: Vec<Segment> = Vec::new();
        for (t, &(kind, id)) in self.tags.iter().enumerate() {
            match out.last_mut() {
                Some(s) if t > 0 && self.tags[t - 1].1 == id => s.end = t + 1,
                _ => out.push(Segment { kind, start: t, end: t + 1 }),
            }
        }
        out
    }
}

fn encode_segments(segs: &[Segment]) -> String {
    segs.iter()
        .map(|s| {
            let kind = match s.kind {
                SegmentKind::Sparse => "sparse",
                SegmentKind::Dense => "dense",
            };
            format!("{kind}:{}-{}", s.start, s.end)
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Parse the partition stored under [`PHASES_META_KEY`].
pub fn decode_segments(text: &str) -> Option<Vec<Segment>> {
    text.split(',')
        .map(|part| {
            let (kind, range) = part.split_once(':')?;
            let (a, b) = range.split_once('-')?;
            let kind = match kind {
                "sparse" => SegmentKind::Sparse,
                "dense" => SegmentKind::Dense,
                _ => return None,
            };
            Some(Segment {
                kind,
                start: a.parse().ok()?,
                end: b.parse().ok()?,
            })
        })
        .collect()
}

fn attempt(cfg: &EnvConfig, scene_seed: u64, profile: &NoiseProfile) -> Result<(Vec<Step>, Vec<Segment>)> {
    let mut env = Env::new(cfg.clone(), scene_seed);
    let mut demo = Demonstrator::new(cfg, profile, scene_seed);
    let mut steps = Vec::new();
    let mut obs = env.observation();
    while !env.is_done() {
        let (action, click) = demo.act(&obs)?;
        steps.push(Step { obs, action, click });
        obs = env.step(&action)?.obs;
    }
    if !env.state().success {
        return Err(HydraError::Generation(format!("scene {scene_seed} timed out")));
    }
    Ok((steps, demo.segments()))
}

/// Generate one successful scripted demonstration, retrying up to ten scenes.
pub fn scripted_demo(cfg: &EnvConfig, seed: u64, profile: &NoiseProfile) -> Result<Demonstration> {
    cfg.validate()?;
    let mut last = None;
    for retry in 0..10u64 {
        let scene = seed.wrapping_add(retry.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        match attempt(cfg, scene, profile) {
            Ok((steps, segments)) => {
                let mut meta = BTreeMap::new();
                meta.insert("source".into(), "scripted".into());
                meta.insert("seed".into(), seed.to_string());
                meta.insert("scene_seed".into(), scene.to_string());
                meta.insert(PHASES_META_KEY.into(), encode_segments(&segments));
                return Ok(Demonstration {
                    id: format!("demo_{seed:05}"),
                    dt: cfg.dt,
                    steps,
                    meta,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(HydraError::Generation(format!(
        "no successful scene after 10 tries from seed {seed}: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{waypoint_action, ControllerConfig};
    use crate::segmenter::{label_modes, relabel_sparse_actions};
    use crate::traj::{validate_demo, Mode};

    fn runs(clicks: &[bool]) -> (usize, usize) {
        let (mut isolated, mut sustained) = (0, 0);
        let mut t = 0;
        while t < clicks.len() {
            if clicks[t] {
                let s = t;
                while t < clicks.len() && clicks[t] {
                    t += 1;
                }
                if t - s == 1 {
                    isolated += 1;
                } else {
                    sustained += 1;
                }
            } else {
                t += 1;
            }
        }
        (isolated, sustained)
    }

    #[test]
    fn demos_succeed_validate_and_close_with_segmenter() {
        let cfg = EnvConfig::default();
        for seed in 0..100 {
            let d = scripted_demo(&cfg, seed, &NoiseProfile { seed, ..Default::default() }).unwrap();
            assert!(validate_demo(&d).is_empty(), "demo {seed}");
            let (iso, sus) = runs(&d.clicks());
            assert!(iso >= 3 && sus == 2, "demo {seed}: {iso} isolated, {sus} sustained");
            let seg = label_modes(&d.clicks(), &d.proprio()).unwrap();
            let script = decode_segments(&d.meta[PHASES_META_KEY]).unwrap();
            assert_eq!(seg.segments, script, "demo {seed}");
        }
    }

    #[test]
    fn noiseless_sparse_motion_is_controller_motion() {
        let cfg = EnvConfig::default();
        let profile = NoiseProfile { sparse_jitter_sigma: 0.0, ..Default::default() };
        let ctrl = ControllerConfig::default();
        for seed in 0..20 {
            let d = scripted_demo(&cfg, seed, &profile).unwrap();
            let seg = label_modes(&d.clicks(), &d.proprio()).unwrap();
            let labeled = relabel_sparse_actions(&d, &seg, &ctrl);
            for (raw, lab) in d.steps.iter().zip(&labeled) {
                if lab.mode == Mode::Sparse {
                    let a = waypoint_action(&raw.obs.proprio, &lab.waypoint, &ctrl);
                    for (x, y) in [(a.dx, raw.action.dx), (a.dy, raw.action.dy), (a.dtheta, raw.action.dtheta)] {
                        assert!((x - y).abs() < 1e-9, "demo {seed}: {a:?} vs {:?}", raw.action);
                    }
                    assert_eq!(a.grip_cmd, raw.action.grip_cmd);
                }
            }
        }
    }

    #[test]
    fn jitter_makes_sparse_actions_inconsistent() {
        let cfg = EnvConfig::default();
        let ctrl = ControllerConfig::default();
        let (mut sparse, mut changed) = (0, 0);
        for seed in 0..10 {
            let d = scripted_demo(&cfg, seed, &NoiseProfile { seed, ..Default::default() }).unwrap();
            let seg = label_modes(&d.clicks(), &d.proprio()).unwrap();
            for (r, l) in d.steps.iter().zip(relabel_sparse_actions(&d, &seg, &ctrl)) {
                if l.mode == Mode::Sparse {
                    sparse += 1;
                    let gap = (r.action.dx - l.action.dx).hypot(r.action.dy - l.action.dy);
                    changed += usize::from(gap > 1e-3);
                }
            }
        }
        assert!(changed * 3 > sparse, "{changed} of {sparse} sparse actions changed");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = EnvConfig::default();
        let p = NoiseProfile::default();
        assert_eq!(scripted_demo(&cfg, 11, &p).unwrap(), scripted_demo(&cfg, 11, &p).unwrap());
    }
}
