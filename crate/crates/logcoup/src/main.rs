use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "logcoup",
    about = "Log-concave coupling sampler and Greedy Bayes fitting for single-hidden-layer nets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Greedy Bayes estimator and write the model archive.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw posterior weights for a single density and write samples.csv.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Number of draws.
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the log-concavity verification battery and write verify_report.json.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Corrupt the curvature constant to confirm the checks can fail.
        #[arg(long)]
        negative_control: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Fit { config, seed, out } => logcoup::cli::cmd_fit(&config, seed, out.as_deref()),
        Command::Sample {
            config,
            count,
            seed,
            out,
        } => logcoup::cli::cmd_sample(&config, count, seed, out.as_deref()),
        Command::Verify {
            config,
            seed,
            out,
            negative_control,
        } => logcoup::cli::cmd_verify(&config, seed, out.as_deref(), negative_control),
    };
    ExitCode::from(code as u8)
}
