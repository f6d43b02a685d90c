//! `sinkperm` — train, evaluate, and poke at permutation-prediction models
//! from the command line.

use clap::{Args, Parser, Subcommand, ValueEnum};
use sinkperm_cli::commands::{self, Predictor, UnshuffleOpts};
use sinkperm_cli::config::RunConfig;
use sinkperm::{Error, LossKind, ModelDims, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sinkperm",
    version,
    about = "Learn to unshuffle sequences with a doubly-stochastic head",
    after_help = "Exit codes: 0 success (gradcheck PASS), 1 gradcheck FAIL, \
                  2 usage or format error, 3 numerical divergence."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Oracle,
    Random,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    SinkhornCe,
    NaiveSigmoidCe,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or validate the configured dataset and print a summary.
    GenData(ConfigArgs),
    /// Train a model; writes model.ckpt and metrics.csv into out_dir.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overwrite existing outputs in out_dir.
        #[arg(long)]
        force: bool,
        /// Worker threads for per-batch passes; results are bit-identical
        /// for every worker count.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate a predictor on held-out data; prints a CSV metrics table.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value_t = PredictorArg::Model)]
        predictor: PredictorArg,
        /// Trained model file (required for --predictor model).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Restore patch order for a scrambled image with a trained model.
    Unshuffle {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained model file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image to split into a patch grid (arrives in original order).
        #[arg(long, conflicts_with = "patches")]
        image: Option<PathBuf>,
        /// Patch image files, given in their (shuffled) sequence order.
        #[arg(long, num_args = 1.., value_name = "FILE")]
        patches: Vec<PathBuf>,
        /// Grid side length; defaults to puzzle.grid from the config.
        #[arg(long)]
        grid: Option<usize>,
        /// Scramble the patches with this seed before predicting.
        #[arg(long)]
        shuffle_seed: Option<u64>,
        /// Reassemble with the known true order instead of the prediction.
        #[arg(long)]
        truth: bool,
        /// Output image path (default: <out_dir>/unshuffled.pgm or .ppm).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        h: usize,
        #[arg(long, default_value_t = 6)]
        h2: usize,
        #[arg(long, default_value_t = 3)]
        l: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = LossArg::SinkhornCe)]
        loss: LossArg,
        /// Negate one tensor's analytic gradient (self-test of the checker).
        #[arg(long)]
        fault: bool,
    },
    /// Round a doubly-stochastic matrix file to the nearest permutation.
    Round {
        /// ASCII matrix: one row per line, whitespace-separated reals.
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Time the normalization, backward-pass, and rounding kernels.
    Bench {
        #[arg(long, default_value_t = 8)]
        l: usize,
        /// Normalization iterations per forward pass.
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData(cfg) => commands::gen_data(&cfg.load()?)?,
        Cmd::Train {
            cfg,
            force,
            workers,
        } => commands::train(&cfg.load()?, force, workers)?,
        Cmd::Eval {
            cfg,
            predictor,
            checkpoint,
        } => {
            let predictor = match predictor {
                PredictorArg::Oracle => Predictor::Oracle,
                PredictorArg::Random => Predictor::Random,
                PredictorArg::Model => Predictor::Model,
            };
            commands::eval(&cfg.load()?, predictor, checkpoint.as_deref())?;
        }
        Cmd::Unshuffle {
            cfg,
            checkpoint,
            image,
            patches,
            grid,
            shuffle_seed,
            truth,
            out,
        } => {
            if image.is_none() && patches.is_empty() {
                return Err(Error::InvalidArgument(
                    "give --image or --patches".into(),
                ));
            }
            commands::unshuffle(
                &cfg.load()?,
                &UnshuffleOpts {
                    checkpoint: &checkpoint,
                    image: image.as_deref(),
                    patches: &patches,
                    grid,
                    shuffle_seed,
                    use_truth: truth,
                    out: out.as_deref(),
                },
            )?;
        }
        Cmd::Gradcheck {
            d,
            h,
            h2,
            l,
            seed,
            loss,
            fault,
        } => {
            let dims = ModelDims { d, h, h2, l };
            let loss = match loss {
                LossArg::SinkhornCe => LossKind::SinkhornCe,
                LossArg::NaiveSigmoidCe => LossKind::NaiveSigmoidCe,
            };
            if !commands::gradcheck(&dims, seed, loss, fault)? {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Round { matrix } => commands::round(&matrix)?,
        Cmd::Bench {
            l,
            iterations,
            trials,
            seed,
        } => commands::bench(l, iterations, trials, seed)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Diverged { .. } | Error::Generation(_) => 3u8,
                _ => 2u8,
            };
            ExitCode::from(code)
        }
    }
}
