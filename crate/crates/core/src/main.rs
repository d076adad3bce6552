use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cspose::attention::Variant;
use cspose::pipeline::commands::{self, Options};

#[derive(Parser)]
#[command(
    name = "cspose",
    version,
    about = "Pose estimation with channel shuffling and attention residual blocks"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory (default: cspose-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Channel shuffle groups.
    #[arg(long, global = true)]
    groups: Option<usize>,
    /// Refinement block: plain, scarb or csarb.
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, or resume from --checkpoint.
    Train,
    /// Score a checkpoint with OKS-based AP/AR.
    Eval,
    /// Write heatmaps and decoded keypoints.
    Infer,
    /// Finite-difference check of every differentiable operation.
    Gradcheck,
    /// Print a channel shuffle permutation.
    ShuffleDemo {
        #[arg(long, default_value_t = 8)]
        channels: usize,
    },
    /// Write a synthetic dataset.
    MakeData,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = cli.global;
    let opts = Options {
        config: g.config,
        seed: g.seed,
        checkpoint: g.checkpoint,
        out: g.out,
        groups: g.groups,
        variant: g.variant,
    };
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Train => commands::train(&opts, &mut stdout),
        Command::Eval => commands::eval(&opts, &mut stdout),
        Command::Infer => commands::infer(&opts, &mut stdout),
        Command::Gradcheck => commands::gradcheck(&opts, &mut stdout),
        Command::ShuffleDemo { channels } => commands::shuffle_demo(&opts, channels, &mut stdout),
        Command::MakeData => commands::make_data(&opts, &mut stdout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
