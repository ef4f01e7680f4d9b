use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "graspldm", version, about = "Latent diffusion grasp generation on procedural objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural dataset (JSON lines, one object per line).
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use a built-in object list instead of the configured one.
        #[arg(long, value_parser = ["desk-train", "desk-held-out"])]
        suite: Option<String>,
        /// Prepended to every object id, so several datasets can be loaded together.
        #[arg(long, default_value = "")]
        id_prefix: String,
    },
    /// Train one stage and write a checkpoint directory with metrics.csv.
    Train {
        #[arg(long, value_parser = ["vae", "ldm", "task-ldm"])]
        stage: String,
        /// Defaults to the config of the resumed checkpoint, then of the --vae checkpoint, then built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Stage-one checkpoint, required for ldm and task-ldm.
        #[arg(long)]
        vae: Option<PathBuf>,
        /// Continue a checkpoint of the same stage.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate grasps for one object of a dataset.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        object: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Region label for task-conditioned checkpoints: top, body or bottom.
        #[arg(long)]
        task: Option<String>,
        /// Also write decoded poses along the reverse chain to this file.
        #[arg(long)]
        dump_trajectory: Option<PathBuf>,
        /// Reverse steps between trajectory snapshots.
        #[arg(long, default_value_t = 50)]
        every: usize,
        /// Randomly rotate the cloud before sampling and map grasps back.
        #[arg(long)]
        rotate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated grasps with the oracle over every object of the data.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Grasps per object; defaults to the config's eval section.
        #[arg(long)]
        n: Option<usize>,
        /// Also measure region-label precision (per present label).
        #[arg(long)]
        labels: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out_json: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Time samplers and record their success rates.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        /// Object to sample for; defaults to the first one.
        #[arg(long)]
        object: Option<String>,
        /// Samplers as `kind:steps`.
        #[arg(long, value_delimiter = ',', default_value = "ddpm:1000,ddim:100")]
        samplers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "100")]
        batch: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Checkpoint, data and sampler selection shared by sampling commands.
#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    /// Overrides the checkpoint's sampler kind.
    #[arg(long, value_parser = ["ddpm", "ddim"])]
    sampler: Option<String>,
    /// DDIM step count.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
