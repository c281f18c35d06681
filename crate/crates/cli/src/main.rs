//! `hydra`: generate demos, label, process, train, evaluate, run ablations
//! and serve the annotation API.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
//! failures while running.

mod commands;
mod config;
mod error;

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::EvalOptions;
use crate::config::Overrides;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hydra", version, about = "Hybrid waypoint and dense-action imitation learning")]
struct Cli {
    /// TOML experiment config; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true, env = "HYDRA_DATA_ROOT")]
    dataset: Option<PathBuf>,
    /// Print debug logs.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record scripted demos with clicks into a new dataset.
    GenData {
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Scene seed of the first demo.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
        /// Demonstrator jitter on sparse segments, meters.
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Segment the stored clicks into modes and waypoints.
    Label {
        /// Label with human clicks only on this fraction of demos and predict the rest.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
    },
    /// Segment and relabel sparse-period actions with the waypoint controller.
    Process {
        /// Keep the demonstrated actions (HYDRA-NR).
        #[arg(long)]
        no_relabel: bool,
        /// Extra waypoints per sparse segment.
        #[arg(long)]
        add_waypoints: Option<usize>,
    },
    /// Train one policy and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Training seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint in closed loop.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "run/checkpoint.json")]
        checkpoint: PathBuf,
        /// Take one controller step per sparse query instead of servoing.
        #[arg(long)]
        without_t: bool,
        /// Treat every step as dense.
        #[arg(long)]
        force_dense: bool,
        /// Metrics file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation over seeds and write its report.
    Ablate {
        /// main, gamma, action_space, noise, label_fraction or add_waypoints.
        kind: String,
        /// Comma-separated values replacing the default sweep.
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
        /// Train on the dataset's demos instead of generating them.
        #[arg(long)]
        use_dataset: bool,
        /// Report file; defaults to `<kind>.report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the annotation API for the dataset.
    Serve {
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
    /// Print report and metrics files as tables.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = config::load(cli.config.as_deref(), cli.dataset.as_deref())?;
    match cli.command {
        Command::GenData {
            n,
            seed,
            out,
            force,
            jitter,
        } => {
            if let Some(j) = jitter {
                cfg.noise.sparse_jitter_sigma = j;
            }
            cfg.n_demos = n;
            cfg.data_seed = seed;
            config::validate(&cfg)?;
            let out = out
                .or_else(|| cfg.dataset.clone())
                .ok_or_else(|| CliError::validation("no output directory; pass --out or --dataset"))?;
            commands::gen_data(&cfg, n, seed, &out, force)
        }
        Command::Label { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(CliError::validation(format!("--fraction {fraction} outside (0, 1]")));
            }
            commands::label(&cfg, fraction)
        }
        Command::Process {
            no_relabel,
            add_waypoints,
        } => {
            if no_relabel {
                cfg.process.relabel = false;
            }
            if let Some(n) = add_waypoints {
                cfg.process.add_waypoints = n;
            }
            commands::process(&cfg)
        }
        Command::Train { overrides, seed, out } => {
            overrides.apply(&mut cfg);
            config::validate(&cfg)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            commands::train(&cfg, seed, &out)
        }
        Command::Eval {
            overrides,
            checkpoint,
            without_t,
            force_dense,
            out,
        } => {
            overrides.apply(&mut cfg);
            config::validate(&cfg)?;
            commands::eval(
                &cfg,
                &EvalOptions {
                    checkpoint: &checkpoint,
                    with_t: !without_t,
                    force_dense,
                    out: out.as_deref(),
                },
            )
            .map(drop)
        }
        Command::Ablate {
            kind,
            values,
            overrides,
            use_dataset,
            out,
        } => {
            overrides.apply(&mut cfg);
            config::validate(&cfg)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{kind}.report.json")));
            commands::ablate(&cfg, &kind, values.as_deref(), use_dataset, &out)
        }
        Command::Serve { port, host } => commands::serve(&cfg, SocketAddr::new(host, port)),
        Command::Report { files } => commands::report(&files),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
