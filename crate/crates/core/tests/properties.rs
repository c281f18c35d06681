use hydra_core::controller::{waypoint_action, ControllerConfig};
use hydra_core::segmenter::{attach_labels, label_modes};
use hydra_core::sim::{scripted_demo, EnvConfig, NoiseProfile};
use hydra_core::traj::{load_dataset, save_dataset, Dataset, ProprioState};
use proptest::prelude::*;

fn line(n: usize) -> Vec<ProprioState> {
    (0..n).map(|i| ProprioState::new(i as f64 * 0.01, 0.5, 0.0, 0.0)).collect()
}

proptest! {
    #[test]
    fn segmentation_respects_clicks(clicks in proptest::collection::vec(any::<bool>(), 2..60)) {
        let n = clicks.len();
        let seg = label_modes(&clicks, &line(n)).unwrap();
        prop_assert_eq!(seg.len(), n);
        for t in 0..n {
            let left = t > 0 && clicks[t - 1];
            let right = t + 1 < n && clicks[t + 1];
            if seg.modes[t].is_dense() {
                prop_assert!(clicks[t]);
                prop_assert_eq!(seg.targets[t], (t + 1).min(n - 1));
            } else {
                prop_assert!(!(clicks[t] && (left || right)));
                // Sparse steps look strictly ahead, except on the final step.
                prop_assert!(seg.targets[t] > t || t == n - 1);
            }
            prop_assert_eq!(seg.waypoints[t], line(n)[seg.targets[t]]);
        }
        // Segments tile the demo.
        let mut next = 0;
        for s in &seg.segments {
            prop_assert_eq!(s.start, next);
            prop_assert!(s.end > s.start);
            next = s.end;
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn controller_steps_are_bounded_and_contracting(
        px in 0.0..1.0f64, py in 0.0..1.0f64, pt in -3.1..3.1f64,
        wx in 0.0..1.0f64, wy in 0.0..1.0f64, wt in -3.1..3.1f64,
    ) {
        let cfg = ControllerConfig::default();
        let p = ProprioState::new(px, py, pt, 0.0);
        let w = ProprioState::new(wx, wy, wt, 1.0);
        let a = waypoint_action(&p, &w, &cfg);
        prop_assert!(a.dx.hypot(a.dy) <= cfg.step_len() + 1e-12);
        prop_assert!(a.dtheta.abs() <= cfg.step_rot() + 1e-12);
        let before = p.distance_to(&w);
        let after = ProprioState::new(px + a.dx, py + a.dy, pt, 0.0).distance_to(&w);
        if before > 0.0 {
            prop_assert!(after < before);
        }
        prop_assert_eq!(a.grip_cmd, 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn datasets_round_trip_exactly(seed in 0u64..1000, clicks in proptest::collection::vec(any::<bool>(), 200)) {
        let mut demo = scripted_demo(&EnvConfig::default(), seed, &NoiseProfile::default()).unwrap();
        let pattern: Vec<bool> = (0..demo.len()).map(|i| clicks[i % clicks.len()]).collect();
        demo.set_clicks(&pattern);
        let seg = label_modes(&pattern, &demo.proprio()).unwrap();
        let labeled = attach_labels(&demo, &seg);
        let ds = Dataset::new(vec![demo]).with_labels(vec![labeled]);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }
}
