//! `fgru`: generate grouping challenges, train and sweep recurrent models,
//! evaluate them, trace their recurrent state and compare them with human
//! raters.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::RunSpec;

#[derive(Parser)]
#[command(name = "fgru", version, about = "Recurrent grouping models: data, training, tracing and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Flat `key = value` config file. Command-line flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable and applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for generation and sweeps. Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory. The effective configuration is saved there as `run.cfg`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cABC or Pathfinder dataset.
    Generate {
        /// cabc or pathfinder.
        kind: Option<String>,
        /// easy, intermediate or hard (Pathfinder: 6, 9 or 14 dash paths).
        #[arg(long)]
        difficulty: Option<String>,
        /// none, luminance or positional (cABC only).
        #[arg(long)]
        control: Option<String>,
        /// classification or segmentation.
        #[arg(long)]
        task: Option<String>,
        /// Total images; a tenth is held out for validation.
        #[arg(long)]
        count: Option<usize>,
        /// Image side in pixels.
        #[arg(long)]
        size: Option<usize>,
        /// Pathfinder path length in dashes (overrides --difficulty).
        #[arg(long)]
        length: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model with one learning rate.
    Train {
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// tdh, td, h or bu.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        timesteps: Option<usize>,
        /// Run index; `train --run k --lr x` reproduces sweep cell (x, k).
        #[arg(long)]
        run: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Learning-rate × seed grid. Several datasets or variants produce a
    /// straining table.
    Sweep {
        /// Dataset directory, optionally named: `hard=DIR`. Repeatable.
        #[arg(long)]
        data: Vec<String>,
        /// Comma-separated variants.
        #[arg(long)]
        variants: Option<String>,
        #[arg(long)]
        timesteps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a split and write per-image scores.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train or val.
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Render per-timestep changes of the low-level recurrent state.
    Trace {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// Comma-separated positions within the split.
        #[arg(long)]
        images: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Human consistency analysis of model scores against rater trials.
    Analyze {
        /// Trial table (CSV).
        #[arg(long)]
        trials: Option<PathBuf>,
        /// Model scores as `NAME=FILE`, from `eval`. Repeatable.
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        bootstrap_iters: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn flag<T: ToString>(key: &'static str, v: &Option<T>) -> (&'static str, Option<String>) {
    (key, v.as_ref().map(T::to_string))
}

fn path_flag(key: &'static str, v: &Option<PathBuf>) -> (&'static str, Option<String>) {
    (key, v.as_ref().map(|p| p.display().to_string()))
}

fn list_flag(key: &'static str, v: &[String]) -> (&'static str, Option<String>) {
    (key, (!v.is_empty()).then(|| v.join(",")))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { kind, difficulty, control, task, count, size, length, common } => {
            let flags = [
                flag("data.kind", &kind),
                flag("data.difficulty", &difficulty),
                flag("data.control", &control),
                flag("data.task", &task),
                flag("data.count", &count),
                flag("data.size", &size),
                flag("data.length", &length),
            ];
            commands::generate(RunSpec::build("generate", &common, &flags)?)
        }
        Command::Train { data, variant, lr, timesteps, run, common } => {
            let flags = [
                path_flag("data.path", &data),
                flag("model.variant", &variant),
                flag("train.lr", &lr),
                flag("model.timesteps", &timesteps),
                flag("train.run", &run),
            ];
            commands::train(RunSpec::build("train", &common, &flags)?)
        }
        Command::Sweep { data, variants, timesteps, common } => {
            let flags = [list_flag("data.sets", &data), flag("model.variants", &variants), flag("model.timesteps", &timesteps)];
            commands::sweep(RunSpec::build("sweep", &common, &flags)?)
        }
        Command::Eval { checkpoint, data, split, common } => {
            let flags = [path_flag("model.checkpoint", &checkpoint), path_flag("data.path", &data), flag("data.split", &split)];
            commands::eval(RunSpec::build("eval", &common, &flags)?)
        }
        Command::Trace { checkpoint, data, split, images, common } => {
            let flags = [
                path_flag("model.checkpoint", &checkpoint),
                path_flag("data.path", &data),
                flag("data.split", &split),
                flag("trace.images", &images),
            ];
            commands::trace(RunSpec::build("trace", &common, &flags)?)
        }
        Command::Analyze { trials, models, repeats, percentile, bootstrap_iters, common } => {
            let flags = [
                path_flag("analyze.trials", &trials),
                list_flag("analyze.models", &models),
                flag("analyze.repeats", &repeats),
                flag("analyze.percentile", &percentile),
                flag("analyze.bootstrap_iters", &bootstrap_iters),
            ];
            commands::analyze(RunSpec::build("analyze", &common, &flags)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
