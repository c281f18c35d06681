//! Multi-seed experiments and the ablation tables built from them.
//!
//! Training runs are cached by everything that determines them, so one sweep
//! can score a trained policy under several executors or noise levels and
//! different sweeps can share the same training runs.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::baselines::{make_baseline, ProcessConfig};
use super::executor::{ExecutorConfig, PolicyVariant};
use super::metrics::{evaluate, EVAL_SEED_BASE};
use crate::controller::ControllerConfig;
use crate::policy::{predict_clicks, train_mode_labeler, LabelerConfig, PolicyBundle, TrainConfig};
use crate::sim::{scripted_demo, EnvConfig, NoiseProfile};
use crate::traj::Demonstration;
use crate::{HydraError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset directory used by the command-line pipeline; experiments generate their own demos.
    pub dataset: Option<PathBuf>,
    /// Evaluation environment. Demos are always recorded without dynamics noise.
    pub env: EnvConfig,
    pub noise: NoiseProfile,
    pub n_demos: usize,
    /// Scene seed of the first demo; demo `i` uses `data_seed + i`.
    pub data_seed: u64,
    pub train: TrainConfig,
    pub controller: ControllerConfig,
    pub executor: ExecutorConfig,
    pub process: ProcessConfig,
    pub labeler: LabelerConfig,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub eval_seed_base: u64,
    pub variant: PolicyVariant,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            env: EnvConfig::default(),
            noise: NoiseProfile::default(),
            n_demos: 50,
            data_seed: 0,
            train: TrainConfig::default(),
            controller: ControllerConfig::default(),
            executor: ExecutorConfig::default(),
            process: ProcessConfig::default(),
            labeler: LabelerConfig::default(),
            seeds: vec![0, 1, 2],
            eval_episodes: 50,
            eval_seed_base: EVAL_SEED_BASE,
            variant: PolicyVariant::Hydra,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HydraError::validation("seed list is empty"));
        }
        if self.n_demos == 0 || self.eval_episodes == 0 {
            return Err(HydraError::validation("demo and evaluation episode counts must be positive"));
        }
        self.env.validate()?;
        self.train.validate()?;
        self.executor.validate()?;
        Ok(())
    }

    /// Environment used to record demos: the evaluation one without dynamics noise.
    pub fn demo_env(&self) -> EnvConfig {
        EnvConfig {
            system_noise: 0.0,
            ..self.env.clone()
        }
    }

    pub fn demos(&self) -> Result<Vec<Demonstration>> {
        let env = self.demo_env();
        (0..self.n_demos as u64)
            .map(|i| scripted_demo(&env, self.data_seed + i, &self.noise))
            .collect()
    }

    /// The configured executor, specialised to one variant and action space.
    pub fn executor_for(&self, variant: PolicyVariant, with_t: bool) -> ExecutorConfig {
        ExecutorConfig {
            variant,
            with_t,
            controller: self.controller,
            ..self.executor.clone()
        }
    }
}

/// Which table to produce, with the swept values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum AblationKind {
    /// The listed variants side by side.
    Main(Vec<PolicyVariant>),
    Gamma(Vec<f64>),
    /// Waypoint-only variants against HYDRA, each with and without the controller.
    ActionSpace(Vec<PolicyVariant>),
    /// BC-RNN and HYDRA at each dynamics noise level.
    Noise(Vec<f64>),
    /// Fraction of demos whose clicks are kept; the rest are predicted.
    LabelFraction(Vec<f64>),
    /// Intermediate waypoints added to each sparse segment.
    AddWaypoints(Vec<usize>),
}

impl AblationKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Main(_) => "main",
            Self::Gamma(_) => "gamma",
            Self::ActionSpace(_) => "action_space",
            Self::Noise(_) => "noise",
            Self::LabelFraction(_) => "label_fraction",
            Self::AddWaypoints(_) => "add_waypoints",
        }
    }

    /// The sweep with its default values.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name.replace('-', "_").as_str() {
            "main" => Self::Main(vec![
                PolicyVariant::Hydra,
                PolicyVariant::HydraNr,
                PolicyVariant::BcRnn,
                PolicyVariant::Bc,
            ]),
            "gamma" => Self::Gamma(vec![0.1, 0.3, 0.5]),
            "action_space" | "wp" => Self::ActionSpace(vec![PolicyVariant::WpNext(1), PolicyVariant::WpMode]),
            "noise" => Self::Noise(vec![0.0, 0.1, 0.3]),
            "label_fraction" | "labels" => Self::LabelFraction(vec![1.0, 0.75, 0.5, 0.25]),
            "add_waypoints" | "add_n" => Self::AddWaypoints(vec![0, 1, 2]),
            other => return Err(HydraError::validation(format!("unknown ablation '{other}'"))),
        })
    }

    /// Replace the swept values, parsed from a comma-separated list.
    pub fn with_values(&self, values: &str) -> Result<Self> {
        fn list<T: FromStr>(s: &str) -> Result<Vec<T>>
        where
            T::Err: fmt::Display,
        {
            s.split(',')
                .map(|v| v.trim().parse::<T>().map_err(|e| HydraError::validation(format!("bad value '{v}': {e}"))))
                .collect()
        }
        let out = match self {
            Self::Main(_) => Self::Main(list(values)?),
            Self::Gamma(_) => Self::Gamma(list(values)?),
            Self::ActionSpace(_) => Self::ActionSpace(list(values)?),
            Self::Noise(_) => Self::Noise(list(values)?),
            Self::LabelFraction(_) => Self::LabelFraction(list(values)?),
            Self::AddWaypoints(_) => Self::AddWaypoints(list(values)?),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HydraError::validation(msg));
        match self {
            Self::Main(v) | Self::ActionSpace(v) if v.is_empty() => bad("no variants to compare".into()),
            Self::Gamma(g) if g.is_empty() || g.iter().any(|g| !(0.0..=1.0).contains(g)) => {
                bad(format!("gamma values {g:?} must be non-empty and in [0, 1]"))
            }
            Self::Noise(n) if n.is_empty() || n.iter().any(|n| !(*n >= 0.0)) => {
                bad(format!("noise levels {n:?} must be non-empty and ≥ 0"))
            }
            Self::LabelFraction(f) if f.is_empty() || f.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) => {
                bad(format!("label fractions {f:?} must be non-empty and in (0, 1]"))
            }
            Self::AddWaypoints(n) if n.is_empty() => bad("no add-N values".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub row: String,
    pub column: String,
    /// Best-checkpoint success for each seed, in seed order.
    pub successes: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ReportCell {
    fn new(row: &str, column: &str, successes: Vec<f64>) -> Self {
        let n = successes.len() as f64;
        let mean = successes.iter().sum::<f64>() / n;
        let var = successes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Self {
            row: row.to_string(),
            column: column.to_string(),
            successes,
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub ablation: AblationKind,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<ReportCell>,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn cell(&self, row: &str, column: &str) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.row == row && c.column == column)
    }

    pub fn mean(&self, row: &str, column: &str) -> Option<f64> {
        self.cell(row, column).map(|c| c.mean)
    }

    /// Success percentages as mean ± std over seeds.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} ({} seeds, {} episodes)\n",
            self.ablation.name(),
            self.config.seeds.len(),
            self.config.eval_episodes
        );
        let head = self.rows.iter().map(|r| r.len()).max().unwrap_or(0).max(4);
        let width = self.columns.iter().map(|c| c.len()).max().unwrap_or(0).max(12);
        let _ = write!(out, "{:head$}", "");
        for c in &self.columns {
            let _ = write!(out, "  {c:>width$}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{r:head$}");
            for c in &self.columns {
                let text = match self.cell(r, c) {
                    Some(cell) => format!("{:.1} ± {:.1}", 100.0 * cell.mean, 100.0 * cell.std),
                    None => "-".into(),
                };
                let _ = write!(out, "  {text:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// One way of scoring a trained policy.
#[derive(Debug, Clone)]
pub struct Setting {
    pub env: EnvConfig,
    pub exec: ExecutorConfig,
}

/// What determines a training run besides the experiment's shared config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSpec {
    pub variant: PolicyVariant,
    pub train: TrainConfig,
    pub process: ProcessConfig,
    /// Fraction of demos with their own clicks; below 1 the rest are predicted.
    pub label_fraction: f64,
}

/// Trains and scores policies for one experiment config, caching checkpoints.
pub struct AblationRunner {
    pub config: ExperimentConfig,
    demos: Vec<Demonstration>,
    relabeled: HashMap<(String, u64), Vec<Demonstration>>,
    runs: HashMap<String, Vec<PolicyBundle<f64>>>,
}

impl AblationRunner {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let demos = config.demos()?;
        Ok(Self::with_demos(config, demos))
    }

    pub fn with_demos(config: ExperimentConfig, demos: Vec<Demonstration>) -> Self {
        Self {
            config,
            demos,
            relabeled: HashMap::new(),
            runs: HashMap::new(),
        }
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn base_trial(&self, variant: PolicyVariant) -> TrialSpec {
        TrialSpec {
            variant,
            train: self.config.train.clone(),
            process: self.config.process.clone(),
            label_fraction: 1.0,
        }
    }

    /// Demos whose clicks past the labeled fraction come from a learned labeler.
    fn demos_for(&mut self, fraction: f64, seed: u64) -> Result<Vec<Demonstration>> {
        if fraction >= 1.0 {
            return Ok(self.demos.clone());
        }
        let key = (format!("{fraction}"), seed);
        if let Some(d) = self.relabeled.get(&key) {
            return Ok(d.clone());
        }
        let cfg = LabelerConfig {
            seed,
            ..self.config.labeler.clone()
        };
        let labeler = train_mode_labeler::<f64>(&self.demos, fraction, &cfg)?;
        let k = (fraction * self.demos.len() as f64).round() as usize;
        let out: Vec<Demonstration> = self
            .demos
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if i < k {
                    return d.clone();
                }
                let clicks = predict_clicks(&labeler, d);
                let mut d = d.clone();
                for (s, c) in d.steps.iter_mut().zip(clicks) {
                    s.click = c;
                }
                d
            })
            .collect();
        self.relabeled.insert(key, out.clone());
        Ok(out)
    }

    /// Snapshots taken at every evaluation interval of one training run.
    pub fn checkpoints(&mut self, trial: &TrialSpec, seed: u64) -> Result<&[PolicyBundle<f64>]> {
        let key = serde_json::to_string(&(trial, seed)).expect("trial specs serialize");
        if !self.runs.contains_key(&key) {
            let demos = self.demos_for(trial.label_fraction, seed)?;
            let train = TrainConfig {
                seed,
                ..trial.train.clone()
            };
            info!("training {} seed {seed}", trial.variant);
            let mut snapshot = |_: &PolicyBundle<f64>| 0.0;
            let out = make_baseline::<f64>(
                trial.variant,
                &demos,
                &trial.process,
                &self.config.controller,
                &train,
                Some(&mut snapshot),
            )?;
            let bundles = if out.checkpoints.is_empty() {
                vec![out.bundle]
            } else {
                out.checkpoints
                    .iter()
                    .map(|p| {
                        let mut b = out.bundle.clone();
                        b.params.copy_values_from(p);
                        b
                    })
                    .collect()
            };
            self.runs.insert(key.clone(), bundles);
        }
        Ok(&self.runs[&key])
    }

    /// Best-checkpoint success of one training run under each setting.
    pub fn score(&mut self, trial: &TrialSpec, seed: u64, settings: &[Setting]) -> Result<Vec<f64>> {
        let (episodes, base) = (self.config.eval_episodes, self.config.eval_seed_base);
        let bundles = self.checkpoints(trial, seed)?;
        settings
            .iter()
            .map(|s| {
                let mut best = 0.0f64;
                for b in bundles {
                    best = best.max(evaluate(b, &s.env, &s.exec, episodes, base)?.success_rate);
                }
                Ok(best)
            })
            .collect()
    }

    /// Per-seed scores, one vector per setting.
    fn sweep(&mut self, trial: &TrialSpec, settings: &[Setting]) -> Result<Vec<Vec<f64>>> {
        let mut per_setting = vec![Vec::new(); settings.len()];
        for seed in self.config.seeds.clone() {
            for (i, s) in self.score(trial, seed, settings)?.into_iter().enumerate() {
                per_setting[i].push(s);
            }
        }
        Ok(per_setting)
    }

    fn setting(&self, variant: PolicyVariant, with_t: bool, noise: Option<f64>) -> Setting {
        let env = match noise {
            Some(n) => EnvConfig {
                system_noise: n,
                ..self.config.env.clone()
            },
            None => self.config.env.clone(),
        };
        Setting {
            env,
            exec: self.config.executor_for(variant, with_t),
        }
    }

    pub fn run(&mut self, ablation: &AblationKind) -> Result<ExperimentReport> {
        ablation.validate()?;
        let mut cells = Vec::new();
        let (rows, columns): (Vec<String>, Vec<String>) = match ablation {
            AblationKind::Main(variants) => {
                let row = "success".to_string();
                for &v in variants {
                    let s = self.sweep(&self.base_trial(v), &[self.setting(v, true, None)])?;
                    cells.push(ReportCell::new(&row, &v.to_string(), s[0].clone()));
                }
                (vec![row], variants.iter().map(|v| v.to_string()).collect())
            }
            AblationKind::Gamma(values) => {
                let row = PolicyVariant::Hydra.to_string();
                let mut cols = Vec::new();
                for &g in values {
                    let mut trial = self.base_trial(PolicyVariant::Hydra);
                    trial.train.gamma = g;
                    let s = self.sweep(&trial, &[self.setting(PolicyVariant::Hydra, true, None)])?;
                    let col = format!("gamma={g}");
                    cells.push(ReportCell::new(&row, &col, s[0].clone()));
                    cols.push(col);
                }
                (vec![row], cols)
            }
            AblationKind::ActionSpace(variants) => {
                let rows = vec!["with T".to_string(), "without T".to_string()];
                let mut all = vec![PolicyVariant::Hydra];
                all.extend(variants.iter().copied().filter(|&v| v != PolicyVariant::Hydra));
                for &v in &all {
                    let settings = [self.setting(v, true, None), self.setting(v, false, None)];
                    let s = self.sweep(&self.base_trial(v), &settings)?;
                    for (row, scores) in rows.iter().zip(s) {
                        cells.push(ReportCell::new(row, &v.to_string(), scores));
                    }
                }
                (rows, all.iter().map(|v| v.to_string()).collect())
            }
            AblationKind::Noise(levels) => {
                let variants = [PolicyVariant::BcRnn, PolicyVariant::Hydra];
                let cols: Vec<String> = levels.iter().map(|&n| noise_column(n)).collect();
                for v in variants {
                    let settings: Vec<Setting> = levels.iter().map(|&n| self.setting(v, true, Some(n))).collect();
                    let s = self.sweep(&self.base_trial(v), &settings)?;
                    for (col, scores) in cols.iter().zip(s) {
                        cells.push(ReportCell::new(&v.to_string(), col, scores));
                    }
                }
                (variants.iter().map(|v| v.to_string()).collect(), cols)
            }
            AblationKind::LabelFraction(fractions) => {
                let row = PolicyVariant::Hydra.to_string();
                let mut cols = Vec::new();
                for &f in fractions {
                    let mut trial = self.base_trial(PolicyVariant::Hydra);
                    trial.label_fraction = f;
                    let s = self.sweep(&trial, &[self.setting(PolicyVariant::Hydra, true, None)])?;
                    let col = format!("{:.0}%", 100.0 * f);
                    cells.push(ReportCell::new(&row, &col, s[0].clone()));
                    cols.push(col);
                }
                (vec![row], cols)
            }
            AblationKind::AddWaypoints(ns) => {
                let row = PolicyVariant::Hydra.to_string();
                let mut cols = Vec::new();
                for &n in ns {
                    let mut trial = self.base_trial(PolicyVariant::Hydra);
                    trial.process.add_waypoints = n;
                    let s = self.sweep(&trial, &[self.setting(PolicyVariant::Hydra, true, None)])?;
                    let col = if n == 0 { "base".to_string() } else { format!("add-{n}") };
                    cells.push(ReportCell::new(&row, &col, s[0].clone()));
                    cols.push(col);
                }
                (vec![row], cols)
            }
        };
        Ok(ExperimentReport {
            ablation: ablation.clone(),
            rows,
            columns,
            cells,
            config: self.config.clone(),
        })
    }
}

pub fn noise_column(level: f64) -> String {
    if level == 0.0 {
        "base".into()
    } else {
        format!("noise={level}")
    }
}

/// Train and score each ablation cell over the configured seeds.
pub fn run_ablation(ablation: &AblationKind, config: &ExperimentConfig) -> Result<ExperimentReport> {
    AblationRunner::new(config.clone())?.run(ablation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_demos: 3,
            seeds: vec![0, 1],
            eval_episodes: 2,
            train: TrainConfig {
                steps: 4,
                eval_every: 2,
                batch_size: 2,
                ..Default::default()
            },
            labeler: LabelerConfig {
                steps: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn gamma_sweep_shape() {
        let r = run_ablation(&AblationKind::Gamma(vec![0.1, 0.3, 0.5]), &tiny()).unwrap();
        assert_eq!(r.columns, ["gamma=0.1", "gamma=0.3", "gamma=0.5"]);
        assert_eq!(r.cells.len(), 3);
        assert!(r.cells.iter().all(|c| c.successes.len() == 2));
    }

    #[test]
    fn noise_sweep_is_two_by_three() {
        let r = run_ablation(&AblationKind::default_for("noise").unwrap(), &tiny()).unwrap();
        assert_eq!(r.rows, ["bc_rnn", "hydra"]);
        assert_eq!(r.columns, ["base", "noise=0.1", "noise=0.3"]);
        assert_eq!(r.cells.len(), 6);
        assert!(r.to_text().lines().count() == 4);
    }

    #[test]
    fn label_fraction_table_has_four_cells() {
        let r = run_ablation(&AblationKind::default_for("labels").unwrap(), &tiny()).unwrap();
        assert_eq!(r.columns, ["100%", "75%", "50%", "25%"]);
        assert_eq!(r.cells.len(), 4);
    }

    #[test]
    fn runs_are_cached_across_sweeps() {
        let mut runner = AblationRunner::new(tiny()).unwrap();
        runner.run(&AblationKind::Main(vec![PolicyVariant::Hydra])).unwrap();
        let before = runner.runs.len();
        runner.run(&AblationKind::Gamma(vec![0.5])).unwrap();
        assert_eq!(runner.runs.len(), before);
    }

    #[test]
    fn report_round_trips_through_json() {
        let r = run_ablation(&AblationKind::AddWaypoints(vec![0, 1]), &tiny()).unwrap();
        let back: ExperimentReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn cell_statistics() {
        let c = ReportCell::new("r", "c", vec![0.2, 0.4, 0.6]);
        assert!((c.mean - 0.4).abs() < 1e-12);
        assert!((c.std - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sweep_values_parse_and_validate() {
        let g = AblationKind::default_for("gamma").unwrap();
        assert_eq!(g.with_values("0.1, 0.5").unwrap(), AblationKind::Gamma(vec![0.1, 0.5]));
        assert!(g.with_values("1.5").is_err());
        assert!(AblationKind::default_for("wp").unwrap().with_values("wp_next1,wp_mode").is_ok());
        assert!(AblationKind::default_for("dagger").is_err());
    }
}
