use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pooling::{PoolSpec, TemperatureMode};
use crate::trainer::data::{generate_dataset, SyntheticTask};
use crate::trainer::model::{PoolConfig, TinyModel};
use crate::trainer::train::{train, TrainConfig};

/// Final temperatures of one `(t0, repeat)` training run.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub t0: f64,
    pub repeat: usize,
    pub final_temperatures: Vec<f64>,
    /// The trained parameter itself; bit-identical to `ln(t0)` when untouched.
    pub final_log_temperatures: Vec<f64>,
    pub final_accuracy: f64,
}

/// Dataset sizes and base settings shared by every cell of the study.
#[derive(Debug, Clone)]
pub struct StudySetup {
    pub task: SyntheticTask,
    pub train_size: usize,
    pub eval_size: usize,
    pub config: TrainConfig,
    pub mode: TemperatureMode,
}

/// Trains one LAE model per `(t0, repeat)` and reports where the temperature
/// ended up. Repeat `r` uses task seed `task.seed + r` and training seed
/// `config.seed + r`; cells run in parallel and are independent.
pub fn temperature_trajectory_study(
    setup: &StudySetup,
    t0_grid: &[f64],
    repeats: usize,
) -> Result<Vec<StudyCell>> {
    if setup.mode == TemperatureMode::Fixed {
        return Err(Error::InvalidArgument(
            "fixed temperature has nothing to train".into(),
        ));
    }
    if t0_grid.is_empty() || repeats == 0 {
        return Err(Error::InvalidArgument(
            "study needs at least one t0 and one repeat".into(),
        ));
    }
    let cells: Vec<(f64, usize)> = t0_grid
        .iter()
        .flat_map(|&t0| (0..repeats).map(move |r| (t0, r)))
        .collect();

    cells
        .par_iter()
        .map(|&(t0, repeat)| {
            let task = setup.task.with_seed(setup.task.seed + repeat as u64);
            let train_set = generate_dataset(&task, setup.train_size)?;
            let eval_set =
                generate_dataset(&task.with_seed(task.seed ^ EVAL_SEED_MASK), setup.eval_size)?;
            let spec =
                PoolConfig::lae(setup.mode, t0).build(task.classes, task.height * task.width)?;
            let cfg = TrainConfig {
                seed: setup.config.seed + repeat as u64,
                ..setup.config.clone()
            };
            let model = TinyModel::new(task.classes, task.features, spec, cfg.seed)?;
            let (model, records) = train(model, &train_set, &eval_set, &cfg)?;
            Ok(StudyCell {
                t0,
                repeat,
                final_temperatures: model.temperatures(),
                final_log_temperatures: match &model.pool {
                    PoolSpec::Lae(t) => t.log_t().to_vec(),
                    _ => Vec::new(),
                },
                final_accuracy: records.last().map_or(f64::NAN, |r| r.eval_accuracy),
            })
        })
        .collect()
}

/// Mixed into a task seed to derive its held-out evaluation set.
pub const EVAL_SEED_MASK: u64 = 0x5eed_0000_e7a1;
