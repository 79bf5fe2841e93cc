//! Command-line entry point; every subcommand delegates to
//! [`taskdistill::pipeline`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taskdistill::config::{Overrides, PipelineConfig};
use taskdistill::experiment::ExperimentConfig;
use taskdistill::pipeline::{self, ExternalScoring};
use taskdistill::similarity::{Metric, RepresentationKind};
use taskdistill::Error;

#[derive(Debug, Parser)]
#[command(name = "taskdistill", version, about = "Similarity-weighted multi-source distillation on synthetic tasks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file (defaults apply when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "parc|rsa|cka")]
    metric: Option<Metric>,
    #[arg(long, global = true, value_name = "feature|pseudo")]
    repr: Option<RepresentationKind>,
    /// Weighting scheme, `NAME[:param]`, e.g. `power:p=12` or `softmax`.
    #[arg(long, global = true, value_name = "NAME[:param]")]
    scheme: Option<String>,
    /// Exponent of the power scheme.
    #[arg(long, global = true, value_name = "REAL")]
    p: Option<f64>,
    /// Temperature of the softmax scheme.
    #[arg(long, global = true, value_name = "REAL")]
    temp: Option<f64>,
    #[arg(long, global = true, value_name = "REAL")]
    lambda: Option<f64>,
    #[arg(long = "labeled-fraction", global = true, value_name = "REAL")]
    labeled_fraction: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw the universe, tasks and target data.
    Gen,
    /// Train and freeze the source models.
    TrainSources,
    /// Score sources on the probe set, or score exported FMAT representations.
    Score {
        /// Directory of `<source_id>.fmat` matrices, one row per probe example.
        #[arg(long, value_name = "DIR", requires = "labels")]
        reps: Option<PathBuf>,
        /// `index,label` CSV of the probe examples (with `--reps`).
        #[arg(long, value_name = "PATH")]
        labels: Option<PathBuf>,
        /// Number of classes (with `--reps`; defaults to max label + 1).
        #[arg(long, value_name = "N")]
        num_classes: Option<usize>,
    },
    /// Turn scores into source weights.
    Weigh,
    /// Train the target model with the weighted objective.
    Distill {
        /// Distill from each source alone instead of the configured scheme.
        #[arg(long)]
        single_source: bool,
    },
    /// Write the report tables.
    Eval,
    /// Run every stage for every configured scheme.
    Pipeline {
        /// Comma-separated schemes, e.g. `nearest,equal,weighted:p=12,inverse,random`.
        #[arg(long, value_name = "LIST")]
        schemes: Option<String>,
    },
    /// Print the effective config as JSON.
    Config {
        /// Start from the synthetic benchmark settings instead of the defaults.
        #[arg(long)]
        benchmark: bool,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Gen => pipeline::GEN,
            Command::TrainSources => pipeline::TRAIN_SOURCES,
            Command::Score { .. } => pipeline::SCORE,
            Command::Weigh => pipeline::WEIGH,
            Command::Distill { .. } => pipeline::DISTILL,
            Command::Eval => pipeline::EVAL,
            Command::Pipeline { .. } => "pipeline",
            Command::Config { .. } => "config",
        }
    }
}

fn load_config(common: &Common, command: &Command) -> taskdistill::Result<PipelineConfig> {
    let mut cfg = match (&common.config, command) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Command::Config { benchmark: true }) => PipelineConfig::from_experiment(&ExperimentConfig::benchmark()),
        (None, _) => PipelineConfig::default(),
    };
    let schemes = match command {
        Command::Pipeline { schemes } => schemes.clone(),
        _ => None,
    };
    let overrides = Overrides {
        seed: common.seed,
        metric: common.metric,
        representation: common.repr,
        scheme: common.scheme.clone(),
        p: common.p,
        temperature: common.temp,
        lambda: common.lambda,
        labeled_fraction: common.labeled_fraction,
        output_dir: common.out.clone(),
        schemes,
    };
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> taskdistill::Result<()> {
    let cfg = load_config(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Gen => pipeline::cmd_gen(&cfg),
        Command::TrainSources => pipeline::cmd_train_sources(&cfg),
        Command::Score { reps: Some(reps), labels, num_classes } => {
            let spec = ExternalScoring {
                reps: reps.clone(),
                labels: labels.clone().expect("clap enforces --labels"),
                metric: cfg.metric,
                representation: cfg.representation,
                num_classes: *num_classes,
            };
            pipeline::cmd_score_external(&spec, &cfg.output_dir).map(|_| ())
        }
        Command::Score { reps: None, .. } => pipeline::cmd_score(&cfg),
        Command::Weigh => pipeline::cmd_weigh(&cfg, &cfg.scheme),
        Command::Distill { single_source: true } => pipeline::cmd_distill_single(&cfg).map(|_| ()),
        Command::Distill { single_source: false } => pipeline::cmd_distill(&cfg, &cfg.scheme).map(|_| ()),
        Command::Eval => pipeline::cmd_eval(&cfg),
        Command::Pipeline { .. } => pipeline::cmd_pipeline(&cfg),
        Command::Config { .. } => {
            print!("{}", cfg.to_json()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = match e.stage() {
                Some(_) => e.to_string(),
                None => Error::Stage { stage: cli.command.stage(), source: Box::new(e) }.to_string(),
            };
            eprintln!("taskdistill: error: {message}");
            ExitCode::FAILURE
        }
    }
}
