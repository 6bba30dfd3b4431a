//! `swan`: batch entry points for the segmented pinching-antenna ISAC stack.
//!
//! Exit codes: 0 ok, 1 validation error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "swan", version, about = "segmented pinching-antenna ISAC toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample scenarios, label them with the reference oracle, and write the
    /// binary dataset plus its manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override data.num_samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Override the root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes the best checkpoint, per-epoch metrics CSV, and
    /// a run manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override model.variant (full | transformer_no_graph | shared_head | mlp).
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint; optional power-ratio and CSI-perturbation sweeps.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated rho_c grid, e.g. "0,0.2,0.4,0.6,0.8,1.0".
        #[arg(long = "rho-grid")]
        rho_grid: Option<String>,
        /// Comma-separated delta grid, e.g. "0,0.05,0.1,0.2".
        #[arg(long = "delta-grid")]
        delta_grid: Option<String>,
        /// Base seed for perturbation draws (3 consecutive seeds are used).
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Which split to evaluate: train | val | test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Beam-head-only adaptation to a changed user count, with a fresh
    /// full-retraining comparison run and a side-by-side report.
    Transfer {
        /// Target-task config (its data.k_c/k_s must match the dataset).
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "src-checkpoint")]
        src_checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient-verification suites (FIM vs finite differences,
    /// quadratic probe, full-loss gradients). Nonzero exit on failure.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        /// Coordinates checked per trainable block.
        #[arg(long, default_value_t = 50)]
        coords: usize,
        /// Corrupt one analytic derivative to prove the checker notices.
        #[arg(long = "inject-sign-flip", default_value_t = false)]
        inject_sign_flip: bool,
    },
    /// Emit the per-figure plot-data bundle from metrics/eval CSVs.
    Plot {
        #[arg(long = "train-csv")]
        train_csv: PathBuf,
        #[arg(long = "eval-csv")]
        eval_csv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenData {
            config,
            out,
            samples,
            seed,
        } => commands::cmd_gen_data(&config, &out, samples, seed),
        Cmd::Train {
            config,
            dataset,
            out,
            seed,
            variant,
        } => commands::cmd_train(&config, &dataset, &out, seed, variant),
        Cmd::Eval {
            checkpoint,
            dataset,
            out,
            config,
            rho_grid,
            delta_grid,
            seed,
            split,
        } => commands::cmd_eval(
            &checkpoint,
            &dataset,
            &out,
            config.as_deref(),
            rho_grid,
            delta_grid,
            seed,
            &split,
        ),
        Cmd::Transfer {
            config,
            src_checkpoint,
            dataset,
            out,
        } => commands::cmd_transfer(&config, &src_checkpoint, &dataset, &out),
        Cmd::GradCheck {
            config,
            coords,
            inject_sign_flip,
        } => commands::cmd_grad_check(&config, coords, inject_sign_flip),
        Cmd::Plot {
            train_csv,
            eval_csv,
            out,
        } => commands::cmd_plot(&train_csv, eval_csv.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code() as u8)
        }
    }
}
