//! Argument parsing and dispatch for the `lae` binary.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::{exit, SweepArgs, TrainArgs};
use crate::grad::GradCheckConfig;
use crate::trainer::{PoolConfig, StudySetup, SyntheticTask, TrainConfig, Transform};
use crate::{Error, PoolKind, PrecisionTag, Result, TemperatureMode};

#[derive(Parser)]
#[command(name = "lae", version, about = "LogAvgExp pooling reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pooled values and gradients for the 2×2 example matrix.
    Fig1 {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic vs finite-difference gradient agreement. Exits 1 on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward and gradient error of LAE under reduced precision.
    PrecisionSweep {
        #[arg(long, value_delimiter = ',', default_values_t = SweepArgs::default().t_grid)]
        t_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = PrecisionTag::ALL.to_vec())]
        precisions: Vec<PrecisionTag>,
        #[arg(long, default_value_t = 256)]
        windows: usize,
        #[arg(long, default_value_t = 64)]
        window_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the synthetic task and write per-epoch records.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Also save the trained model as a flat weight CSV.
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy against input size after zoom, crop or pad.
    Robustness {
        /// Evaluate a saved model instead of retraining.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Pooling operators to retrain when no model is given.
        #[arg(long, value_delimiter = ',', default_values_t = vec![PoolKind::Lae, PoolKind::Avg, PoolKind::Max])]
        pools: Vec<PoolKind>,
        #[arg(long, default_value_t = Transform::Zoom)]
        transform: Transform,
        #[arg(long, value_delimiter = ',', default_values_t = vec![4, 6, 8, 10, 12, 16])]
        sizes: Vec<usize>,
        #[command(flatten)]
        train: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final temperature for each initial temperature and repeat.
    Study {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 4.0, 16.0])]
        t0_grid: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = TemperatureMode::Shared)]
        mode: TemperatureMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct ModelArgs {
    #[arg(long, default_value_t = PoolKind::Lae)]
    pool: PoolKind,
    #[arg(long, default_value_t = 4.0)]
    t0: f64,
    #[arg(long, default_value_t = TemperatureMode::Shared)]
    mode: TemperatureMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    temp_lr_multiplier: f64,
    #[arg(long, default_value_t = 1024)]
    train_size: usize,
    #[arg(long, default_value_t = 512)]
    eval_size: usize,
}

impl ModelArgs {
    fn train_args(&self, pool: PoolKind) -> TrainArgs {
        let mut args = TrainArgs::new(
            PoolConfig {
                mode: self.mode,
                t0: self.t0,
                ..PoolConfig::new(pool)
            },
            self.seed,
        );
        args.config.epochs = self.epochs;
        args.config.learning_rate = self.lr;
        args.config.temp_lr_multiplier = self.temp_lr_multiplier;
        args.train_size = self.train_size;
        args.eval_size = self.eval_size;
        args
    }
}

// reports are rendered in memory so a failed command never leaves a partial file
fn emit(path: &Option<PathBuf>, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => Ok(stdout.write_all(bytes)?),
    }
}

fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let mut buf = Vec::new();
    let mut status = exit::SUCCESS;
    let out = match cli.command {
        Command::Fig1 { out } => {
            super::write_fig1(&mut buf)?;
            out
        }
        Command::Gradcheck {
            seed,
            cases,
            tolerance,
            out,
        } => {
            let cfg = GradCheckConfig {
                seed,
                cases,
                tolerance,
                ..GradCheckConfig::default()
            };
            if !super::write_gradcheck(&cfg, &mut buf)? {
                writeln!(
                    stderr,
                    "gradcheck: at least one row exceeded tolerance {tolerance}"
                )?;
                status = exit::TOLERANCE;
            }
            out
        }
        Command::PrecisionSweep {
            t_grid,
            precisions,
            windows,
            window_len,
            seed,
            out,
        } => {
            let args = SweepArgs {
                t_grid,
                precisions,
                windows,
                window_len,
                seed,
            };
            super::write_precision_sweep(&args, &mut buf)?;
            out
        }
        Command::Train {
            model,
            save_model,
            out,
        } => {
            let (trained, records) = super::run_train(&model.train_args(model.pool))?;
            super::write_train_records(&records, trained.temperatures().len(), &mut buf)?;
            if save_model.is_some() {
                let mut model_buf = Vec::new();
                super::write_model(&trained, &mut model_buf)?;
                emit(&save_model, &model_buf, stdout)?;
            }
            out
        }
        Command::Robustness {
            model,
            pools,
            transform,
            sizes,
            train,
            out,
        } => {
            let eval = train.train_args(PoolKind::Avg).eval_set()?;
            let models = match model {
                Some(path) => {
                    let file = File::open(&path)
                        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                    let m = super::read_model(io::BufReader::new(file))?;
                    vec![(m.pool.kind().name().to_string(), m)]
                }
                None => pools
                    .iter()
                    .map(|&kind| {
                        Ok((
                            kind.name().to_string(),
                            super::run_train(&train.train_args(kind))?.0,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            super::write_robustness(&models, &eval, transform, &sizes, train.seed, &mut buf)?;
            out
        }
        Command::Study {
            t0_grid,
            repeats,
            mode,
            seed,
            epochs,
            out,
        } => {
            let setup = StudySetup {
                task: SyntheticTask::default().with_seed(seed),
                train_size: 1024,
                eval_size: 512,
                config: TrainConfig {
                    seed,
                    epochs,
                    ..TrainConfig::default()
                },
                mode,
            };
            super::write_study(&setup, &t0_grid, repeats, &mut buf)?;
            out
        }
    };
    emit(&out, &buf, stdout)?;
    Ok(status)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `stdout` unless `--out` names a file.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{e}");
            return e.exit_code();
        }
    };
    match run(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "lae: {e}");
            super::exit_code(&e)
        }
    }
}
