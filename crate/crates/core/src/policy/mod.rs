//! The hybrid policy: waypoint head, recurrent dense trunk with action and
//! mode heads, the mode-weighted objective, training, and the click labeler.

mod bundle;
mod features;
mod labeler;
mod loss;
mod train;

pub use bundle::{ForwardOutput, Heads, PolicyBundle, PolicyConfig, PolicyRunner, PolicyStep, TrunkKind};
pub use features::{
    decode_action, decode_waypoint, encode_action, encode_obs, encode_waypoint, ACTION_DIM, OBS_DIM, WAYPOINT_DIM,
};
pub use labeler::{
    click_targets, decode_clicks, predict_clicks, train_mode_labeler, LabelerConfig, ModeLabeler,
};
pub use loss::{hydra_loss, mode_weight, step_loss, HeadOutputs, LossConfig, LossParts, StepTarget};
pub use train::{
    prepare_targets, select_checkpoint, train, train_on, EvalRecord, Evaluator, LossRecord, TrainConfig, TrainLog,
    TrainOutcome,
};

/// Forward pass over a window of observations from hidden state `h0`.
pub fn policy_forward<S: crate::Scalar>(
    bundle: &PolicyBundle<S>,
    window: &[crate::traj::Observation],
    h0: &[S],
) -> crate::Result<ForwardOutput<S>> {
    bundle.forward(window, h0)
}
