//! Closed-loop execution, metrics, baselines and ablation runs.

mod baselines;
mod executor;
mod experiment;
mod metrics;

pub use executor::{
    rollout, Agent, ExecutorConfig, LatchEvent, LatchKind, PolicyVariant, RandomAgent, RolloutResult, ScriptedAgent,
};
pub use metrics::{
    action_consistency, evaluate, evaluate_with, offline_metrics, summarize, Metrics, OfflineMetrics, EVAL_SEED_BASE,
};
pub use baselines::{
    make_baseline, next_n_labels, process_demos, segment_demo, variant_labels, variant_policy, variant_train_config,
    ProcessConfig,
};
pub use experiment::{noise_column, run_ablation, AblationKind, AblationRunner, ExperimentConfig, ExperimentReport, ReportCell, Setting, TrialSpec};
