use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use depthgaze::datagen::DomainStyle;
use depthgaze::{DomainRole, FusionVariant};
use depthgaze_cli::commands::{self, output_dir, GenSynth, TrainDa};

#[derive(Parser)]
#[command(
    name = "depthgaze",
    version,
    about = "Depth-aware gaze target detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_style(s: &str) -> Result<DomainStyle, String> {
    DomainStyle::parse(s).ok_or_else(|| format!("unknown style `{s}` (expected a or b)"))
}

fn parse_role(s: &str) -> Result<DomainRole, String> {
    match s {
        "source" => Ok(DomainRole::Source),
        "target" => Ok(DomainRole::Target),
        _ => Err(format!("unknown role `{s}` (expected source or target)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenSynth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "a", value_parser = parse_style)]
        style: DomainStyle,
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        #[arg(long, default_value = "source", value_parser = parse_role)]
        role: DomainRole,
    },
    /// Train on one dataset, select on a validation set.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Source-only versus domain-adapted training on a source/target pair.
    TrainDa {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        source_val: PathBuf,
        /// Unlabeled target images used for adaptation.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        target_eval: PathBuf,
        /// Only run the source-only model.
        #[arg(long)]
        no_da: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training set for the fixed-bias baseline (defaults to --data).
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write heatmaps (.npy) and overlay images for a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train several variants with one configuration and tabulate the scores.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "full,v1,v2,v3,v4,v5,v6,v7,v8,v9,v10,v11"
        )]
        variants: Vec<FusionVariant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenSynth {
            out,
            n,
            image_size,
            seed,
            style,
            distractors,
            role,
        } => commands::gen_synth(&GenSynth {
            out: output_dir(out.as_deref(), "gen-synth"),
            n,
            image_size,
            seed,
            style,
            distractors,
            role,
        }),
        Command::Train {
            config,
            train,
            val,
            out,
        } => commands::train(&config, &train, &val, &output_dir(out.as_deref(), "train")),
        Command::TrainDa {
            config,
            source,
            source_val,
            target,
            target_eval,
            no_da,
            out,
        } => commands::train_da(&TrainDa {
            config: &config,
            source: &source,
            source_val: &source_val,
            target: &target,
            target_eval: &target_eval,
            out: &output_dir(out.as_deref(), "train-da"),
            with_da: !no_da,
        }),
        Command::Eval {
            checkpoint,
            data,
            train,
            out,
        } => commands::eval(
            &checkpoint,
            &data,
            train.as_deref(),
            &output_dir(out.as_deref(), "eval"),
        ),
        Command::Predict {
            checkpoint,
            data,
            out,
        } => commands::predict(&checkpoint, &data, &output_dir(out.as_deref(), "predict")),
        Command::Ablate {
            config,
            train,
            val,
            variants,
            out,
        } => commands::ablate(
            &config,
            &train,
            &val,
            &variants,
            &output_dir(out.as_deref(), "ablate"),
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
