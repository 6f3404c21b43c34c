//! `dtl` — end-to-end pipeline for event-camera dual transfer learning:
//! simulate a synthetic scene, embed events, pretrain the teacher, train
//! the student under any ablation arm, evaluate, run the full ablation,
//! verify every gradient, and dump features for inspection.

mod commands;
mod config;
mod data;
mod error;
mod gradcheck;
mod manifest;
mod pgm;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dtl", version, about = "Event-camera dual transfer learning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene and simulate its event stream.
    Simulate {
        /// Scene configuration file (`key = value`).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for events, frames and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the configuration file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert an event file into dense tensors.
    Embed {
        /// Events file in the canonical text format.
        #[arg(long)]
        events: PathBuf,
        /// Train configuration file (representation, bins, window).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the frozen teacher on clean frames.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory produced by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the student under the configured ablation arm.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Teacher checkpoint; required by arms using consistency or
        /// prediction transfer.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained checkpoint on a dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train all five arms per seed and tabulate MIoU.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated run seeds (at least three).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the randomized gradient suite; exit 0 iff every item passes.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test fixture: deliberately break an operation's derivative.
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Write feature maps, the translated image and the prediction of one
    /// sample as portable image files.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample index inside the dataset directory.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed } => commands::cmd_simulate(&config, &out, seed),
        Command::Embed {
            events,
            config,
            out,
            seed,
        } => commands::cmd_embed(&events, &config, &out, seed),
        Command::TrainTeacher {
            config,
            data,
            out,
            seed,
        } => commands::cmd_train_teacher(&config, &data, &out, seed),
        Command::Train {
            config,
            data,
            teacher,
            out,
            seed,
        } => commands::cmd_train(&config, &data, teacher.as_deref(), &out, seed),
        Command::Eval {
            config,
            data,
            checkpoint,
            out,
            seed,
        } => commands::cmd_eval(&config, &data, &checkpoint, &out, seed),
        Command::Ablate { config, seeds, out } => commands::cmd_ablate(&config, &seeds, &out),
        Command::Gradcheck { seed, inject_fault } => {
            commands::cmd_gradcheck(seed, inject_fault.as_deref())
        }
        Command::Dump {
            config,
            checkpoint,
            data,
            sample,
            out,
            seed,
        } => commands::cmd_dump(&config, &checkpoint, &data, sample, &out, seed),
    };
    std::process::exit(commands::exit_code(result));
}
