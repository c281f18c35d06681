//! Hybrid waypoint and dense-action imitation learning on a planar manipulation task.

pub mod controller;
pub mod error;
pub mod eval;
pub mod neural;
pub mod policy;
pub mod scalar;
pub mod segmenter;
pub mod sim;
pub mod traj;

pub use error::{HydraError, Result};
pub use scalar::Scalar;

/// Precision used by the pipeline, the CLI and the annotation service.
pub type Real = f64;
pub type Policy = policy::PolicyBundle<Real>;
pub type ModeLabeler = policy::ModeLabeler<Real>;
pub type ParamStore = neural::ParamStore<Real>;
/// Single-precision policy, for memory-bound inference.
pub type PolicyF32 = policy::PolicyBundle<f32>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{reset, EnvConfig};

    #[test]
    fn single_precision_policy_tracks_double() {
        let p = Policy::new(policy::PolicyConfig::hydra(3)).unwrap();
        let q: PolicyF32 = p.cast();
        let (_, obs) = reset(&EnvConfig::default(), 4);
        let a = p.forward(&[obs; 3], &p.initial_state()).unwrap();
        let b = q.forward(&[obs; 3], &q.initial_state()).unwrap();
        let (x, y) = (a.actions.last().unwrap(), b.actions.last().unwrap());
        for (u, v) in x.iter().zip(y) {
            assert!((u - *v as f64).abs() < 1e-4, "{u} vs {v}");
        }
    }
}
