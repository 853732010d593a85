use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use relu_forge::io::{self, ApproximateArgs, TargetSpec, TrainArgs};
use relu_forge::train::LossId;

#[derive(Parser)]
#[command(name = "relu-forge", version, about = "Build, check and train explicit narrow ReLU networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    X2,
    Paraboloid,
    File,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a memorizer for a dataset and print its summary.
    Memorize {
        dataset: PathBuf,
        #[arg(long)]
        signed: bool,
        #[arg(long, env = io::SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exit 0 iff the network hits every label within `--tol`.
    Verify {
        network: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Gradient descent from the constructed memorizer.
    Train {
        dataset: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        /// GELU temperature; 0 trains with ReLU.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value = "squared_l2")]
        loss: LossId,
        #[arg(long, default_value_t = 0)]
        restarts: usize,
        #[arg(long, env = io::SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-2)]
        learning_rate: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// JSON-lines run log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Build a grid approximator and report its error.
    Approximate {
        #[arg(long, value_enum)]
        target: TargetArg,
        /// Scalar dataset used when `--target file`.
        #[arg(long)]
        target_file: Option<PathBuf>,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 20000)]
        samples: usize,
        #[arg(long, env = io::SEED_ENV, default_value_t = 0)]
        seed: u64,
        /// Network file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report JSON file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write one CSV of point positions per construction stage.
    Trace {
        network: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> relu_forge::Result<bool> {
    let mut out = std::io::stdout().lock();
    match cli.cmd {
        Cmd::Memorize { dataset, signed, seed, out: o } => {
            io::cli_memorize(&dataset, signed, seed, o.as_deref(), &mut out)?;
        }
        Cmd::Verify { network, dataset, tol } => {
            return Ok(io::cli_verify(&network, &dataset, tol, &mut out)?.passed);
        }
        Cmd::Train { dataset, lambda, eps, loss, restarts, seed, learning_rate, max_iters, log } => {
            let args = TrainArgs { lambda, eps, loss, restarts, seed, learning_rate, max_iters };
            io::cli_train(&dataset, &args, log.as_deref(), &mut out)?;
        }
        Cmd::Approximate { target, target_file, h, p, samples, seed, out: o, report } => {
            let target = match (target, target_file) {
                (TargetArg::X2, _) => TargetSpec::Square,
                (TargetArg::Paraboloid, _) => TargetSpec::Paraboloid,
                (TargetArg::File, Some(f)) => TargetSpec::File(f),
                (TargetArg::File, None) => {
                    return Err(relu_forge::Error::InvalidParameter("--target file needs --target-file".into()))
                }
            };
            let args = ApproximateArgs { target, h, p, samples, seed };
            io::cli_approximate(&args, o.as_deref(), report.as_deref(), &mut out)?;
        }
        Cmd::Trace { network, dataset, out_dir } => {
            io::cli_trace(&network, &dataset, &out_dir, &mut out)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
