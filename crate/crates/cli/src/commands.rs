use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hydra_core::eval::{
    evaluate, process_demos, segment_demo, variant_labels, variant_policy, variant_train_config, AblationKind,
    AblationRunner, ExperimentConfig, ExperimentReport, Metrics, PolicyVariant, ProcessConfig,
};
use hydra_core::neural::Archive;
use hydra_core::policy::{predict_clicks, train_mode_labeler, train_on, PolicyBundle, PolicyConfig, TrainConfig, TrainLog};
use hydra_core::segmenter::{attach_labels, augment_sparse_states};
use hydra_core::sim::scripted_demo;
use hydra_core::traj::{load_dataset, save_dataset, write_atomic, Dataset, LabeledStep};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::dataset_dir;
use crate::error::CliError;

/// Demo metadata key recording where a demo's clicks came from.
pub const CLICKS_SOURCE_KEY: &str = "clicks_source";
pub const GENERATION_FILE: &str = "generation.json";
pub const PROCESS_FILE: &str = "process.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";

type CmdResult<T = ()> = Result<T, CliError>;

/// A trained policy together with everything needed to reproduce it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub variant: PolicyVariant,
    pub seed: u64,
    /// Optimizer step of the selected snapshot, when snapshots were evaluated.
    pub step: Option<usize>,
    pub archive: Archive<PolicyConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainLogFile {
    pub config: ExperimentConfig,
    pub variant: PolicyVariant,
    pub seed: u64,
    pub log: TrainLog,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub config: ExperimentConfig,
    pub checkpoint: PathBuf,
    pub variant: PolicyVariant,
    pub with_t: bool,
    pub force_dense: bool,
    pub metrics: Metrics,
}

#[derive(Debug, Serialize, Deserialize)]
struct GenerationFile {
    n: usize,
    seed: u64,
    env: hydra_core::sim::EnvConfig,
    noise: hydra_core::sim::NoiseProfile,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifacts serialize");
    s.push('\n');
    s
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, to_json(v).as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, tag: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{tag}"))
}

/// Record `n` scripted demos into a fresh dataset directory.
///
/// The dataset is built in a hidden sibling directory and renamed into place,
/// so an interrupted run leaves nothing at `out`.
pub fn gen_data(cfg: &ExperimentConfig, n: usize, seed: u64, out: &Path, force: bool) -> CmdResult {
    if n == 0 {
        return Err(CliError::validation("--n must be positive"));
    }
    if out.exists() && !force {
        return Err(CliError::validation(format!(
            "{} already exists; pass --force to replace it",
            out.display()
        )));
    }
    let env = cfg.demo_env();
    let demos = (0..n as u64)
        .map(|i| scripted_demo(&env, seed + i, &cfg.noise))
        .collect::<hydra_core::Result<Vec<_>>>()?;
    let partial = sibling(out, "partial");
    if partial.exists() {
        fs::remove_dir_all(&partial)?;
    }
    let built = save_dataset(&Dataset::new(demos), &partial).and_then(|_| {
        let meta = GenerationFile {
            n,
            seed,
            env,
            noise: cfg.noise,
        };
        write_atomic(&partial.join(GENERATION_FILE), to_json(&meta).as_bytes())
    });
    if let Err(e) = built {
        let _ = fs::remove_dir_all(&partial);
        return Err(e.into());
    }
    if out.exists() {
        let old = sibling(out, "old");
        fs::rename(out, &old)?;
        fs::rename(&partial, out)?;
        fs::remove_dir_all(&old)?;
    } else {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::rename(&partial, out)?;
    }
    info!("wrote {n} demos to {}", out.display());
    Ok(())
}

/// Segment each demo's clicks and store the labels.
///
/// With `fraction < 1` a click labeler is trained on the first demos and its
/// predicted clicks replace those of the rest before segmenting.
pub fn label(cfg: &ExperimentConfig, fraction: f64) -> CmdResult {
    let dir = dataset_dir(cfg)?;
    let mut ds = load_dataset(&dir)?;
    if fraction < 1.0 {
        let labeler = train_mode_labeler::<f64>(&ds.demos, fraction, &cfg.labeler)?;
        let k = (fraction * ds.demos.len() as f64).round() as usize;
        for demo in &mut ds.demos[k..] {
            let clicks = predict_clicks(&labeler, demo);
            demo.set_clicks(&clicks);
            demo.meta.insert(CLICKS_SOURCE_KEY.into(), "labeler".into());
        }
        info!("predicted clicks for {} of {} demos", ds.demos.len() - k, ds.demos.len());
    }
    let labeled = ds
        .demos
        .iter()
        .map(|d| {
            if !d.steps.iter().any(|s| s.click) {
                warn!("demo {} has no clicks; it becomes one sparse segment", d.id);
            }
            Ok(attach_labels(d, &segment_demo(d, 0)?))
        })
        .collect::<hydra_core::Result<Vec<_>>>()?;
    save_dataset(&ds.with_labels(labeled), &dir)?;
    info!("labeled {}", dir.display());
    Ok(())
}

/// Segment and, unless disabled, relabel sparse actions with the controller.
pub fn process(cfg: &ExperimentConfig) -> CmdResult {
    let dir = dataset_dir(cfg)?;
    let ds = load_dataset(&dir)?;
    // Augmented copies have no demo of their own; they are added at training time.
    let pc = ProcessConfig {
        augment_copies: 0,
        augment_sigma: 0.0,
        ..cfg.process.clone()
    };
    let labeled = process_demos(&ds.demos, &pc, &cfg.controller)?;
    save_dataset(&ds.with_labels(labeled), &dir)?;
    write_atomic(&dir.join(PROCESS_FILE), to_json(&pc).as_bytes())?;
    info!("processed {} (relabel {})", dir.display(), pc.relabel);
    Ok(())
}

fn training_tuples(cfg: &ExperimentConfig, variant: PolicyVariant, ds: &Dataset) -> CmdResult<Vec<Vec<LabeledStep>>> {
    let mut labeled = match variant {
        PolicyVariant::Hydra | PolicyVariant::HydraNr => ds.labeled.clone().ok_or_else(|| {
            CliError::validation("dataset has no labels; run `hydra label` or `hydra process` first")
        })?,
        v => return Ok(variant_labels(v, &ds.demos, &cfg.process, &cfg.controller)?),
    };
    if variant == PolicyVariant::HydraNr && labeled.iter().flatten().any(|s| s.relabeled) {
        return Err(CliError::validation(
            "hydra_nr trains on raw actions; run `hydra process --no-relabel` first",
        ));
    }
    if variant == PolicyVariant::Hydra && !labeled.iter().flatten().any(|s| s.relabeled) {
        warn!("no relabeled steps in the dataset; run `hydra process` to relabel sparse actions");
    }
    let p = &cfg.process;
    if variant == PolicyVariant::Hydra && p.augment_sigma > 0.0 {
        let base = labeled.len();
        for copy in 0..p.augment_copies {
            for i in 0..base {
                let seed = p.seed ^ ((copy * base + i) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                labeled.push(augment_sparse_states(&labeled[i], p.augment_sigma, seed, &cfg.controller)?);
            }
        }
    }
    Ok(labeled)
}

/// Train one policy on the dataset and write the checkpoint and log into `out`.
pub fn train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CmdResult {
    let dir = dataset_dir(cfg)?;
    let ds = load_dataset(&dir)?;
    let variant = cfg.variant;
    let labeled = training_tuples(cfg, variant, &ds)?;
    let train_cfg = variant_train_config(variant, &TrainConfig { seed, ..cfg.train.clone() });
    let exec = cfg.executor_for(variant, true);
    let mut eval = |b: &PolicyBundle<f64>| match evaluate(b, &cfg.env, &exec, cfg.eval_episodes, cfg.eval_seed_base) {
        Ok(m) => {
            info!("checkpoint success {:.3}", m.success_rate);
            m.success_rate
        }
        Err(e) => {
            warn!("evaluation failed: {e}");
            0.0
        }
    };
    info!("training {variant} seed {seed} for {} steps", train_cfg.steps);
    let outcome = train_on(&labeled, &train_cfg, variant_policy(variant, seed), Some(&mut eval))?;
    let step = hydra_core::policy::select_checkpoint(&outcome.log)
        .ok()
        .map(|c| outcome.log.evals[c].step);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let resolved = ExperimentConfig {
        train: train_cfg,
        ..cfg.clone()
    };
    write_json(
        &out.join(TRAIN_LOG_FILE),
        &TrainLogFile {
            config: resolved.clone(),
            variant,
            seed,
            log: outcome.log,
        },
    )?;
    write_json(
        &out.join(CHECKPOINT_FILE),
        &Checkpoint {
            config: resolved,
            variant,
            seed,
            step,
            archive: outcome.bundle.to_archive(),
        },
    )?;
    info!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

pub struct EvalOptions<'a> {
    pub checkpoint: &'a Path,
    pub with_t: bool,
    pub force_dense: bool,
    pub out: Option<&'a Path>,
}

/// Roll out a checkpoint in the configured environment.
pub fn eval(cfg: &ExperimentConfig, opts: &EvalOptions<'_>) -> CmdResult<Metrics> {
    let ck: Checkpoint = read_json(opts.checkpoint)?;
    let bundle = PolicyBundle::<f64>::from_archive(&ck.archive)?;
    let mut exec = cfg.executor_for(ck.variant, opts.with_t);
    exec.force_dense = opts.force_dense;
    exec.validate()?;
    let metrics = evaluate(&bundle, &cfg.env, &exec, cfg.eval_episodes, cfg.eval_seed_base)?;
    println!(
        "{} ({} episodes): success {:.1}%, stages {:?}",
        ck.variant,
        metrics.episodes,
        100.0 * metrics.success_rate,
        metrics.stage_success
    );
    if let Some(path) = opts.out {
        write_json(
            path,
            &EvalFile {
                config: cfg.clone(),
                checkpoint: opts.checkpoint.to_path_buf(),
                variant: ck.variant,
                with_t: opts.with_t,
                force_dense: opts.force_dense,
                metrics: metrics.clone(),
            },
        )?;
    }
    Ok(metrics)
}

pub fn ablate(cfg: &ExperimentConfig, kind: &str, values: Option<&str>, use_dataset: bool, out: &Path) -> CmdResult {
    let mut ablation = AblationKind::default_for(kind)?;
    if let Some(v) = values {
        ablation = ablation.with_values(v)?;
    }
    ablation.validate()?;
    let mut runner = if use_dataset {
        let ds = load_dataset(&dataset_dir(cfg)?)?;
        AblationRunner::with_demos(cfg.clone(), ds.demos)
    } else {
        AblationRunner::new(cfg.clone())?
    };
    let report = runner.run(&ablation)?;
    write_json(out, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

/// Render report and metrics files as text.
pub fn report(files: &[PathBuf]) -> CmdResult {
    for path in files {
        let value: serde_json::Value = read_json(path)?;
        println!("{}", path.display());
        if value.get("cells").is_some() {
            let r: ExperimentReport = serde_json::from_value(value)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            print!("{}", r.to_text());
        } else if value.get("metrics").is_some() {
            let r: EvalFile = serde_json::from_value(value)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            let m = &r.metrics;
            println!(
                "{} with_t={} episodes={} success={:.1}% stages={:?} mean_length={:.1}",
                r.variant,
                r.with_t,
                m.episodes,
                100.0 * m.success_rate,
                m.stage_success,
                m.mean_length
            );
        } else {
            return Err(CliError::validation(format!(
                "{}: neither an ablation report nor a metrics file",
                path.display()
            )));
        }
    }
    Ok(())
}

pub fn serve(cfg: &ExperimentConfig, addr: SocketAddr) -> CmdResult {
    let dir = dataset_dir(cfg)?;
    let service = annotate::ServiceConfig {
        controller: cfg.controller,
        ..annotate::ServiceConfig::new(dir)
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(annotate::serve(service, addr))?;
    Ok(())
}
