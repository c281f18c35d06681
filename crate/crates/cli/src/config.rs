use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use hydra_core::eval::{ExperimentConfig, PolicyVariant};

use crate::error::CliError;

/// Flags shared by the commands that train or evaluate. Each one overrides
/// the matching config-file entry.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Policy variant: hydra, hydra_nr, bc, bc_rnn, wp_next<N>, wp_mode.
    #[arg(long)]
    pub variant: Option<PolicyVariant>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Optimizer steps per training run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Evaluate and snapshot every this many steps.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Evaluation episodes per checkpoint.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Demos generated for experiments.
    #[arg(long)]
    pub n_demos: Option<usize>,
    /// Dynamics noise of the evaluation environment, as a fraction of the action caps.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(n) = self.steps {
            cfg.train.steps = n;
        }
        if let Some(n) = self.eval_every {
            cfg.train.eval_every = n;
        }
        if let Some(n) = self.episodes {
            cfg.eval_episodes = n;
        }
        if let Some(n) = self.n_demos {
            cfg.n_demos = n;
        }
        if let Some(x) = self.noise {
            cfg.env.system_noise = x;
        }
        if let Some(g) = self.gamma {
            cfg.train.gamma = g;
        }
    }
}

/// Defaults, then the config file, then the dataset flag.
pub fn load(path: Option<&Path>, dataset: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
            parse(&text).map_err(|msg| CliError::validation(format!("{}: {msg}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(d) = dataset {
        cfg.dataset = Some(d.to_path_buf());
    }
    Ok(cfg)
}

/// Parse a TOML experiment config. Errors carry the line and column.
pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())
}

/// The dataset directory, which must exist.
pub fn dataset_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::validation("no dataset given; pass --dataset or set HYDRA_DATA_ROOT"))?;
    if !dir.is_dir() {
        return Err(CliError::validation(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate().map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn nested_tables_override_fields() {
        let cfg = parse("seeds = [4]\nvariant = \"bc_rnn\"\n[train]\ngamma = 0.1\n[env]\nsystem_noise = 0.2\n").unwrap();
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.variant, PolicyVariant::BcRnn);
        assert_eq!(cfg.train.gamma, 0.1);
        assert_eq!(cfg.train.steps, ExperimentConfig::default().train.steps);
        assert_eq!(cfg.env.system_noise, 0.2);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = parse("seeds = [1]\n[train]\ngama = 0.3\n").unwrap_err();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("gama"), "{err}");
    }

    #[test]
    fn flags_beat_the_file() {
        let mut cfg = parse("[train]\nsteps = 7\n").unwrap();
        Overrides {
            steps: Some(9),
            seeds: Some(vec![1, 2]),
            ..Default::default()
        }
        .apply(&mut cfg);
        assert_eq!((cfg.train.steps, cfg.seeds), (9, vec![1, 2]));
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            dataset: Some("data".into()),
            ..Default::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
    }
}
