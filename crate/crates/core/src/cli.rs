//! Report generators behind the `lae` binary.
//!
//! Every writer emits a `#`-prefixed schema line first, then a CSV header and
//! rows. Floats are written with Rust's shortest round-trip formatting, so
//! output is byte-identical across reruns with the same flags.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grad::{
    avg_backward, lae_backward_input, max_backward, mixed_backward, run_gradcheck, GradCheckConfig,
};
use crate::pooling::{
    pool_avg, pool_lae, pool_max, pool_mixed, GateParam, MixedParam, PoolKind, PoolSpec,
    TemperatureParam,
};
use crate::precision::{lae_precision_sweep, sample_sweep_windows};
use crate::tensor::PrecisionTag;
use crate::trainer::{
    evaluate_robustness, generate_dataset, temperature_trajectory_study, Dataset, PoolConfig,
    StudySetup, SyntheticTask, TinyModel, TrainConfig, TrainRecord, Transform, EVAL_SEED_MASK,
};

mod app;

pub use app::main_with;

pub const SCHEMA_VERSION: u32 = 1;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const TOLERANCE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
}

/// Maps a library error to the process exit code it should produce.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => exit::IO,
        Error::InvalidArgument(_)
        | Error::InvalidTemperature(_)
        | Error::InvalidMixingWeight(_)
        | Error::InvalidStep(_)
        | Error::InvalidPartition(_)
        | Error::EmptyShape(_)
        | Error::SizeMismatch { .. } => exit::USAGE,
        _ => exit::TOLERANCE,
    }
}

fn schema_line<W: Write>(out: &mut W, name: &str) -> Result<()> {
    writeln!(out, "# lae-{name} schema v{SCHEMA_VERSION}")?;
    Ok(())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

// ---------------------------------------------------------------- fig1

pub const FIG1_X: [f64; 4] = [-1.0, 0.0, 1.4, 1.6];
pub const FIG1_X_SWAPPED: [f64; 4] = [-1.0, 0.0, 1.6, 1.4];
pub const FIG1_TEMPERATURES: [f64; 3] = [0.5, 1.0, 2.0];

/// One line of the 2×2 example table. Input rows carry the matrix in `grad`
/// and no value.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Row {
    pub operator: &'static str,
    pub param: String,
    pub value: Option<f64>,
    pub grad: [f64; 4],
}

fn as4(v: Vec<f64>) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

/// Pooled values and input gradients for the example matrix and its swapped
/// twin. Rows for the swapped matrix carry a `;swapped` param suffix.
pub fn fig1_rows() -> Result<Vec<Fig1Row>> {
    let mut rows = Vec::new();
    for (x, swapped) in [(FIG1_X, false), (FIG1_X_SWAPPED, true)] {
        let name = |p: &str| match (swapped, p.is_empty()) {
            (false, _) => p.to_string(),
            (true, true) => "swapped".to_string(),
            (true, false) => format!("{p};swapped"),
        };
        rows.push(Fig1Row {
            operator: "input",
            param: name("X"),
            value: None,
            grad: x,
        });
        rows.push(Fig1Row {
            operator: "max",
            param: name(""),
            value: Some(pool_max(&x)?),
            grad: as4(max_backward(&x)?),
        });
        rows.push(Fig1Row {
            operator: "avg",
            param: name(""),
            value: Some(pool_avg(&x)?),
            grad: as4(avg_backward(&x)?),
        });
        rows.push(Fig1Row {
            operator: "mixed",
            param: name("alpha=0.5"),
            value: Some(pool_mixed(&x, 0.5)?),
            grad: as4(mixed_backward(&x, 0.5)?.0),
        });
        for t in FIG1_TEMPERATURES {
            rows.push(Fig1Row {
                operator: "lae",
                param: name(&format!("t={t}")),
                value: Some(pool_lae(&x, t)?),
                grad: as4(lae_backward_input(&x, t)?),
            });
        }
    }
    Ok(rows)
}

pub fn write_fig1<W: Write>(mut out: W) -> Result<()> {
    schema_line(&mut out, "fig1")?;
    let mut w = csv_writer(out);
    w.write_record([
        "operator", "param", "value", "grad_00", "grad_01", "grad_10", "grad_11",
    ])?;
    for r in fig1_rows()? {
        let mut rec = vec![
            r.operator.to_string(),
            r.param,
            r.value.map_or(String::new(), |v| v.to_string()),
        ];
        rec.extend(r.grad.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

/// Writes one row per checked (operator, parameter); returns whether every
/// row is within tolerance.
pub fn write_gradcheck<W: Write>(cfg: &GradCheckConfig, mut out: W) -> Result<bool> {
    let rows = run_gradcheck(cfg)?;
    schema_line(&mut out, "gradcheck")?;
    let mut w = csv_writer(out);
    w.write_record([
        "operator",
        "param",
        "cases",
        "max_rel_error",
        "tolerance",
        "passed",
    ])?;
    for r in &rows {
        w.write_record([
            r.operator.to_string(),
            r.param.clone(),
            r.cases.to_string(),
            r.max_rel_error.to_string(),
            r.tolerance.to_string(),
            r.passed().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows.iter().all(|r| r.passed()))
}

// ---------------------------------------------------------------- precision sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepArgs {
    pub t_grid: Vec<f64>,
    pub precisions: Vec<PrecisionTag>,
    pub windows: usize,
    pub window_len: usize,
    pub seed: u64,
}

impl Default for SweepArgs {
    fn default() -> Self {
        SweepArgs {
            t_grid: vec![0.25, 1.0, 4.0, 16.0, 64.0, 256.0, 1024.0],
            precisions: PrecisionTag::ALL.to_vec(),
            windows: 256,
            window_len: 64,
            seed: 0,
        }
    }
}

pub fn write_precision_sweep<W: Write>(args: &SweepArgs, mut out: W) -> Result<()> {
    let windows = sample_sweep_windows(args.windows, args.window_len, args.seed)?;
    let rows = lae_precision_sweep(&windows, &args.t_grid, &args.precisions)?;
    schema_line(&mut out, "precision-sweep")?;
    let mut w = csv_writer(out);
    w.write_record([
        "temperature",
        "precision",
        "forward_median",
        "forward_max",
        "grad_median",
        "grad_max",
        "contrast_median",
        "contrast_max",
    ])?;
    for r in rows {
        w.write_record([
            r.temperature.to_string(),
            r.precision.name().to_string(),
            r.forward_median.to_string(),
            r.forward_max.to_string(),
            r.grad_median.to_string(),
            r.grad_max.to_string(),
            r.contrast_median.to_string(),
            r.contrast_max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- training

/// Everything needed to train one model on the synthetic task.
#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub pool: PoolConfig,
    pub task: SyntheticTask,
    pub config: TrainConfig,
    pub train_size: usize,
    pub eval_size: usize,
}

impl TrainArgs {
    pub fn new(pool: PoolConfig, seed: u64) -> Self {
        TrainArgs {
            pool,
            task: SyntheticTask::default().with_seed(seed),
            config: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            train_size: 1024,
            eval_size: 512,
        }
    }

    /// Held-out set drawn from the same task with a derived seed.
    pub fn eval_set(&self) -> Result<Dataset> {
        generate_dataset(
            &self.task.with_seed(self.task.seed ^ EVAL_SEED_MASK),
            self.eval_size,
        )
    }
}

pub fn run_train(args: &TrainArgs) -> Result<(TinyModel, Vec<TrainRecord>)> {
    let train_set = generate_dataset(&args.task, args.train_size)?;
    let eval_set = args.eval_set()?;
    let t = &args.task;
    let spec = args.pool.build(t.classes, t.height * t.width)?;
    let model = TinyModel::new(t.classes, t.features, spec, args.config.seed)?;
    crate::trainer::train(model, &train_set, &eval_set, &args.config)
}

/// One row per epoch with a `t_<i>` column per temperature entry.
pub fn write_train_records<W: Write>(
    records: &[TrainRecord],
    temperature_columns: usize,
    mut out: W,
) -> Result<()> {
    schema_line(&mut out, "train")?;
    let mut w = csv_writer(out);
    let mut header = vec![
        "epoch".to_string(),
        "train_loss".into(),
        "eval_accuracy".into(),
    ];
    header.extend((0..temperature_columns).map(|i| format!("t_{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut rec = vec![
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.eval_accuracy.to_string(),
        ];
        rec.extend(r.temperatures.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- flat weight CSV

/// Writes `model` as `field,index,value` rows.
pub fn write_model<W: Write>(model: &TinyModel, mut out: W) -> Result<()> {
    schema_line(&mut out, "model")?;
    let mut w = csv_writer(out);
    w.write_record(["field", "index", "value"])?;
    let mut meta = vec![
        ("pool", model.pool.kind().name().to_string()),
        ("classes", model.classes.to_string()),
        ("features", model.features.to_string()),
    ];
    if let PoolSpec::Lae(t) = &model.pool {
        meta.push(("mode", t.mode().name().to_string()));
    }
    for (k, v) in meta {
        w.write_record([k, "0", &v])?;
    }
    let params: Vec<(&str, &[f64])> = match &model.pool {
        PoolSpec::Lae(t) => vec![("log_t", t.log_t())],
        PoolSpec::Mixed(m) => vec![("pre_alpha", &m.pre_alpha)],
        PoolSpec::Gated(g) => vec![("gate_w", &g.w)],
        _ => vec![],
    };
    for (field, values) in [
        ("weight", model.weights.as_slice()),
        ("bias", model.bias.as_slice()),
    ]
    .into_iter()
    .chain(params)
    {
        for (i, v) in values.iter().enumerate() {
            w.write_record([field, &i.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_model`].
pub fn read_model<R: Read>(input: R) -> Result<TinyModel> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut meta: HashMap<String, String> = HashMap::new();
    let mut params: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let (field, index, value) = match (rec.get(0), rec.get(1), rec.get(2)) {
            (Some(f), Some(i), Some(v)) => (f, i, v),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "malformed model row {rec:?}"
                )))
            }
        };
        match field {
            "pool" | "classes" | "features" | "mode" => {
                meta.insert(field.to_string(), value.to_string());
            }
            _ => {
                let i = index.parse().map_err(|_| bad_model(field, index))?;
                let v = value.parse().map_err(|_| bad_model(field, value))?;
                params.entry(field.to_string()).or_default().push((i, v));
            }
        }
    }
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("model file lacks `{k}`")))
    };
    let count =
        |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad_model(k, get(k).unwrap())) };
    let kind: PoolKind = get("pool")?.parse()?;
    let classes = count("classes")?;
    let features = count("features")?;
    let vector = |k: &str| -> Result<Vec<f64>> {
        let mut v = params.get(k).cloned().unwrap_or_default();
        v.sort_by_key(|(i, _)| *i);
        if v.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
            return Err(Error::InvalidArgument(format!(
                "model field `{k}` has gaps or duplicates"
            )));
        }
        Ok(v.into_iter().map(|(_, x)| x).collect())
    };

    let pool = match kind {
        PoolKind::Max => PoolSpec::Max,
        PoolKind::Avg => PoolSpec::Avg,
        PoolKind::Lse => PoolSpec::Lse,
        PoolKind::Lae => PoolSpec::Lae(TemperatureParam::from_log(
            get("mode")?.parse()?,
            vector("log_t")?,
        )?),
        PoolKind::Mixed => PoolSpec::Mixed(MixedParam {
            pre_alpha: vector("pre_alpha")?,
        }),
        PoolKind::Gated => PoolSpec::Gated(GateParam {
            w: vector("gate_w")?,
        }),
    };
    let weights = vector("weight")?;
    let bias = vector("bias")?;
    if weights.len() != classes * features {
        return Err(Error::SizeMismatch {
            what: "model weights",
            expected: classes * features,
            got: weights.len(),
        });
    }
    if bias.len() != classes {
        return Err(Error::SizeMismatch {
            what: "model bias",
            expected: classes,
            got: bias.len(),
        });
    }
    Ok(TinyModel {
        classes,
        features,
        weights,
        bias,
        pool,
    })
}

fn bad_model(field: &str, value: &str) -> Error {
    Error::InvalidArgument(format!("bad value `{value}` for model field `{field}`"))
}

// ---------------------------------------------------------------- robustness

/// Accuracy-vs-size rows, one block per labelled model.
pub fn write_robustness<W: Write>(
    models: &[(String, TinyModel)],
    data: &Dataset,
    transform: Transform,
    sizes: &[usize],
    seed: u64,
    mut out: W,
) -> Result<()> {
    let mut rows = Vec::new();
    for (label, model) in models {
        for (size, acc) in evaluate_robustness(model, data, transform, sizes, seed)? {
            rows.push([
                label.clone(),
                transform.name().to_string(),
                size.to_string(),
                acc.to_string(),
            ]);
        }
    }
    schema_line(&mut out, "robustness")?;
    let mut w = csv_writer(out);
    w.write_record(["pool", "transform", "size", "accuracy"])?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- temperature study

pub fn write_study<W: Write>(
    setup: &StudySetup,
    t0_grid: &[f64],
    repeats: usize,
    mut out: W,
) -> Result<()> {
    let cells = temperature_trajectory_study(setup, t0_grid, repeats)?;
    schema_line(&mut out, "study")?;
    let mut w = csv_writer(out);
    w.write_record([
        "t0",
        "repeat",
        "entry",
        "final_t",
        "final_log_t",
        "final_accuracy",
    ])?;
    for c in cells {
        for (i, (t, log_t)) in c
            .final_temperatures
            .iter()
            .zip(&c.final_log_temperatures)
            .enumerate()
        {
            w.write_record([
                c.t0.to_string(),
                c.repeat.to_string(),
                i.to_string(),
                t.to_string(),
                log_t.to_string(),
                c.final_accuracy.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
