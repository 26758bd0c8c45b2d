//! `sceneaug`: dataset generation, instruction transformation, training,
//! generation, evaluation and inspection.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sceneaug", version, about = "Instructed 3D scene augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML configuration file; keys not given take the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Seed for every random choice of the command.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes and instructions.
    Datagen {
        #[command(flatten)]
        common: Common,
        /// Output directory (gets `scenes/` and `instructions.jsonl`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Paraphrase descriptive sentences into generative instructions.
    Transform {
        #[command(flatten)]
        common: Common,
        /// JSONL with `id` and `text` per line, or jobs from a previous run.
        #[arg(long)]
        input: PathBuf,
        /// Output JSONL of jobs with their round history.
        #[arg(long)]
        output: PathBuf,
        /// Paraphrase service URL; the built-in rule-based mock is used when absent.
        #[arg(long, env = "SCENEAUG_PARAPHRASE_ENDPOINT")]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 3)]
        max_rounds: usize,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        /// Also write the input entries with clean paraphrases as their text.
        #[arg(long)]
        entries_out: Option<PathBuf>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// JSONL loss log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Place and generate an object for an instruction.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        text: String,
        /// Output directory for PLY files and augmented scenes.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        guidance: Option<f64>,
        /// Class label of the new object; predicted from the text by default.
        #[arg(long)]
        class: Option<String>,
        /// Write ASCII instead of binary PLY.
        #[arg(long)]
        ascii: bool,
    },
    /// Compute generation metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate on `--data`.
        #[arg(long, requires = "data", conflicts_with_all = ["generated", "reference"])]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Scene JSON whose objects form the generated sets (by class).
        #[arg(long, requires = "reference")]
        generated: Option<PathBuf>,
        /// Scene JSON whose objects form the reference sets (by class).
        #[arg(long, requires = "generated")]
        reference: Option<PathBuf>,
        /// Report JSON path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a scene, instruction, job, checkpoint or PLY file.
    Inspect { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
