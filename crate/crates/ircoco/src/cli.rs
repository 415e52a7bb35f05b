//! Command-line front end. Exit status: 0 success, 1 usage error, 2 failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ircoco_core::drl::{LossMode, ScheduleKind};
use ircoco_core::metrics::MetricKind;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::pipeline::{self, Outcome};
use crate::report;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ircoco", version, about = "Code completion training with immediate critic rewards")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed. Overrides the config file; `IRCOCO_SEED` overrides both.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Schedule {
    Ircoco,
    Delayed,
    La,
    Binary,
}

impl From<Schedule> for ScheduleKind {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::Ircoco => ScheduleKind::ImmediateCritic,
            Schedule::Delayed => ScheduleKind::Delayed,
            Schedule::La => ScheduleKind::LinearAttenuation,
            Schedule::Binary => ScheduleKind::Binary01,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Joint,
    SftOnly,
    DrlOnly,
}

impl From<Mode> for LossMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Joint => LossMode::Joint,
            Mode::SftOnly => LossMode::SftOnly,
            Mode::DrlOnly => LossMode::DrlOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Metric {
    EditSim,
    Bleu,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest, tokenize, normalize and split a source corpus.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Source directories or files.
        #[arg(long = "in", required = false)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chunk_lines: Option<usize>,
        #[arg(long)]
        vocab_cap: Option<usize>,
    },
    /// Supervised training of the actor from scratch.
    Sft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Label prefixes with the metric of the actor's greedy completion.
    BuildCriticData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        actor: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<Metric>,
    },
    /// Fit the critic to the labelled prefixes.
    TrainCritic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        critic_data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Policy-gradient alignment of a supervised actor.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        actor: PathBuf,
        #[arg(long)]
        critic: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        schedule: Option<Schedule>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        train_limit: Option<usize>,
    },
    /// Greedy completion of the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        actor: PathBuf,
        /// Results bundle to write.
        #[arg(long)]
        out: PathBuf,
        /// Row label in reports.
        #[arg(long)]
        method: String,
    },
    /// Comparison table over evaluated runs.
    Report {
        /// Bundle files, or directories holding `results.json`.
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Resolves the experiment configuration: file, then flag seed, then
/// `IRCOCO_SEED`. Some seed must come from one of the three.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(0),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    let env_set = std::env::var_os(crate::config::SEED_ENV).is_some();
    cfg.apply_env()?;
    if common.config.is_none() && common.seed.is_none() && !env_set {
        return Err(Error::Config("no seed: pass --seed, a config file, or set IRCOCO_SEED".into()));
    }
    Ok(cfg)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn note(stage: &str, outcome: Outcome, out: &Path) {
    match outcome {
        Outcome::Ran => eprintln!("{stage}: wrote {}", out.display()),
        Outcome::UpToDate => eprintln!("{stage}: {} is up to date", out.display()),
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            common,
            inputs,
            out,
            chunk_lines,
            vocab_cap,
        } => {
            let mut cfg = resolve_config(&common)?;
            if !inputs.is_empty() {
                cfg.corpus.paths = inputs;
            }
            if cfg.corpus.paths.is_empty() {
                return Err(Error::Config("no corpus paths: pass --in".into()));
            }
            if let Some(n) = chunk_lines {
                cfg.corpus.chunk_lines = n;
            }
            if let Some(n) = vocab_cap {
                cfg.corpus.vocab_cap = n;
            }
            cfg.validate()?;
            note("prepare", pipeline::prepare(&cfg.corpus, cfg.seed, &out)?, &out);
        }
        Command::Sft {
            common,
            data,
            out,
            epochs,
            lr,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(e) = epochs {
                cfg.sft.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.sft.lr = lr;
            }
            cfg.validate()?;
            require(&data, "data directory")?;
            note("sft", pipeline::run_sft(&cfg, &data, &out)?, &out);
        }
        Command::BuildCriticData {
            common,
            data,
            actor,
            out,
            metric,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(m) = metric {
                cfg.critic_data.metric = match m {
                    Metric::EditSim => MetricKind::EditSim,
                    Metric::Bleu => MetricKind::Bleu,
                };
            }
            require(&actor, "actor checkpoint")?;
            note("build-critic-data", pipeline::run_build_critic_data(&cfg, &data, &actor, &out)?, &out);
        }
        Command::TrainCritic {
            common,
            data,
            critic_data,
            out,
            epochs,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(e) = epochs {
                cfg.critic.epochs = e;
            }
            cfg.validate()?;
            note("train-critic", pipeline::run_train_critic(&cfg, &data, &critic_data, &out)?, &out);
        }
        Command::Align {
            common,
            data,
            actor,
            critic,
            out,
            schedule,
            mode,
            epochs,
            lr,
            train_limit,
        } => {
            let mut cfg = resolve_config(&common)?;
            let mut align = cfg.align;
            if let Some(s) = schedule {
                align.schedule = s.into();
            }
            if let Some(m) = mode {
                align.loss_mode = m.into();
            }
            if let Some(e) = epochs {
                align.epochs = e;
            }
            if let Some(lr) = lr {
                align.lr = lr;
            }
            if train_limit.is_some() {
                cfg.align_train_limit = train_limit;
            }
            require(&actor, "actor checkpoint")?;
            if let Some(c) = &critic {
                require(c, "critic checkpoint")?;
            }
            let outcome = pipeline::run_align(&cfg, &align, &data, &actor, critic.as_deref(), &out)?;
            note("align", outcome, &out);
        }
        Command::Evaluate {
            common,
            data,
            actor,
            out,
            method,
        } => {
            let cfg = resolve_config(&common)?;
            require(&actor, "actor checkpoint")?;
            let bundle = pipeline::run_evaluate(&method, &cfg.hash(), &data, &actor, &out)?;
            println!(
                "{}: edit_sim {:.2} em {:.2} bleu4 {:.2} over {}",
                bundle.method, bundle.report.edit_sim, bundle.report.em, bundle.report.bleu4, bundle.report.count
            );
        }
        Command::Report { runs, out } => {
            let bundles = runs.iter().map(|p| report::load_bundle(p)).collect::<Result<Vec<_>>>()?;
            report::render_report(&bundles, &out)?;
            print!("{}", report::csv(&bundles));
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let _ = e.print();
            if !matches!(e.kind(), ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                eprintln!();
                let _ = Cli::command().print_help();
            }
            return EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
