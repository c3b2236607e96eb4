//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line reaches the terminal. The
//! process exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use logavgexp::grad::{run_gradcheck, GradCheckConfig};
use logavgexp::pooling::{
    group_logits, pool_avg, pool_lae, pool_lse, pool_max, softargmax, MixedParam, PoolKind,
    PoolSpec, TemperatureMode, TemperatureParam,
};
use logavgexp::precision::{
    lae_precision_sweep, lse_kernel, sample_sweep_windows, KernelVariant, SweepRow,
};
use logavgexp::trainer::{
    generate_dataset, sgd_step, train, ModelGradients, PoolConfig, SyntheticTask, TinyModel,
    TrainConfig, EVAL_SEED_MASK,
};
use logavgexp::{global_pool, PrecisionTag, Shape, Tensor};

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ------------------------------------------------------------------ 1

const GOLDEN_TOL: f64 = 0.005;
const GOLDEN_BUDGET: Duration = Duration::from_secs(1);

fn example_matrix_golden() -> Verdict {
    let start = Instant::now();
    let x = Tensor::from_slice(Shape::new(1, 1, 2, 2), &[-1.0, 0.0, 1.4, 1.6]).unwrap();
    let pool = |spec: PoolSpec| global_pool(&x, &spec).unwrap().data()[0];
    let lae = |t: f64| pool(PoolSpec::Lae(TemperatureParam::fixed(t).unwrap()));
    let cases = [
        ("max", pool(PoolSpec::Max), 1.6),
        ("avg", pool(PoolSpec::Avg), 0.5),
        (
            "mixed(1/2)",
            pool(PoolSpec::Mixed(MixedParam::new(0.5, 1).unwrap())),
            1.05,
        ),
        ("lae(t=1/2)", lae(0.5), 1.18),
        ("lae(t=1)", lae(1.0), 0.95),
        ("lae(t=2)", lae(2.0), 0.76),
    ];
    let elapsed = start.elapsed();
    let worst = cases
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let shown: Vec<String> = cases
        .iter()
        .map(|(n, got, _)| format!("{n}={got:.4}"))
        .collect();
    verdict(
        worst <= GOLDEN_TOL && elapsed < GOLDEN_BUDGET,
        format!(
            "{}; worst |err| {worst:.2e} <= {GOLDEN_TOL}; {elapsed:?} < {GOLDEN_BUDGET:?}",
            shown.join(" ")
        ),
    )
}

// ------------------------------------------------------------------ 2

const IDENTITY_TOL: f64 = 1e-12;

fn constant_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_lae: f64 = 0.0;
    let mut worst_lse: f64 = 0.0;
    for _ in 0..100 {
        let a: f64 = rng.random_range(-1e3..1e3);
        let n = rng.random_range(1..=64);
        let t = 2f64.powf(rng.random_range(-6.0..6.0));
        worst_lae = worst_lae.max((pool_lae(&vec![a; n], t).unwrap() - a).abs());
        worst_lse = worst_lse.max((pool_lse(&[a, a]).unwrap() - (a + 2f64.ln())).abs());
    }
    verdict(
        worst_lae <= IDENTITY_TOL && worst_lse <= IDENTITY_TOL,
        format!("100 draws: max |LAE(a..a)-a| {worst_lae:.1e}, max |LSE(a,a)-a-ln2| {worst_lse:.1e} <= {IDENTITY_TOL:.0e}"),
    )
}

// ------------------------------------------------------------------ 3

const GRADCHECK_CASES: usize = 200;
const GRADCHECK_TOL: f64 = 1e-5;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(30);

fn gradient_oracle() -> Verdict {
    let start = Instant::now();
    let cfg = GradCheckConfig {
        seed: 3,
        cases: GRADCHECK_CASES,
        tolerance: GRADCHECK_TOL,
        temperatures: vec![0.25, 1.0, 4.0, 16.0],
        ..GradCheckConfig::default()
    };
    let rows = run_gradcheck(&cfg).unwrap();
    let elapsed = start.elapsed();
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} {}", r.operator, r.param))
        .collect();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let covered = ["lae", "mixed", "gated"]
        .iter()
        .all(|op| rows.iter().any(|r| r.operator == *op));
    verdict(
        failed.is_empty() && covered && rows.iter().all(|r| r.cases >= GRADCHECK_CASES) && elapsed < GRADCHECK_BUDGET,
        format!(
            "{} rows x {GRADCHECK_CASES} cases, worst rel err {worst:.2e} <= {GRADCHECK_TOL:.0e}, failing {failed:?}; {elapsed:?} < {GRADCHECK_BUDGET:?}",
            rows.len()
        ),
    )
}

// ------------------------------------------------------------------ 4

const MEAN_LIMIT_T: f64 = 1e6;
const MEAN_LIMIT_TOL: f64 = 1e-3;

fn limit_theorems() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    let mut worst_mean: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let t = 2f64.powf(rng.random_range(-6.0..6.0));
        let y = pool_lae(&z, t).unwrap();
        let (mean, max) = (pool_avg(&z).unwrap(), pool_max(&z).unwrap());
        if !(mean <= y && y <= max && y >= max - t * (n as f64).ln()) {
            violations += 1;
        }
        worst_mean = worst_mean.max((pool_lae(&z, MEAN_LIMIT_T).unwrap() - mean).abs());
    }
    verdict(
        violations == 0 && worst_mean <= MEAN_LIMIT_TOL,
        format!("1000 vectors: {violations} bound violations; max |LAE(z,1e6)-mean| {worst_mean:.2e} <= {MEAN_LIMIT_TOL:.0e}"),
    )
}

// ------------------------------------------------------------------ 5

const SUPERCLASS_TOL: f64 = 1e-12;

fn superclass_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=32);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let k = rng.random_range(1..=n);
        // shuffled indices cut into k non-empty runs
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut cuts: Vec<usize> = (1..n).collect();
        cuts.shuffle(&mut rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(k - 1).collect();
        cuts.sort_unstable();
        let mut groups = Vec::new();
        let mut prev = 0;
        for c in cuts.into_iter().chain([n]) {
            groups.push(idx[prev..c].to_vec());
            prev = c;
        }

        let coarse = softargmax(&group_logits(&z, &groups).unwrap()).unwrap();
        let fine = softargmax(&z).unwrap();
        for (g, p) in groups.iter().zip(&coarse) {
            let summed: f64 = g.iter().map(|&i| fine[i]).sum();
            worst = worst.max((summed - p).abs());
        }
    }
    verdict(
        worst <= SUPERCLASS_TOL,
        format!("100 (z, partition) pairs: max |p_group - sum p_fine| {worst:.1e} <= {SUPERCLASS_TOL:.0e}"),
    )
}

// ------------------------------------------------------------------ 6

const KERNEL_AGREE_TOL: f64 = 1e-12;

fn kernel_stability() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut non_finite = 0usize;
    let mut compared = 0usize;
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.random_range(1..=64);
        let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        if i % 2 == 0 {
            let j = rng.random_range(0..n);
            z[j] = if rng.random_bool(0.5) { 1e4 } else { -1e4 };
        }
        let stable = lse_kernel(&z, KernelVariant::Stable, PrecisionTag::Double).unwrap();
        if !stable.is_finite() {
            non_finite += 1;
        }
        let naive = lse_kernel(&z, KernelVariant::Naive, PrecisionTag::Double).unwrap();
        if naive.is_finite() {
            compared += 1;
            worst = worst.max((stable - naive).abs() / stable.abs().max(1.0));
        }
    }
    verdict(
        non_finite == 0 && compared > 0 && worst <= KERNEL_AGREE_TOL,
        format!("1000 windows (half with +-1e4): {non_finite} non-finite stable; {compared} naive-finite, max rel diff {worst:.1e} <= {KERNEL_AGREE_TOL:.0e}"),
    )
}

// ------------------------------------------------------------------ 7

/// Minimum half-precision error ratio between t = 64 and t = 1.
///
/// Fixed after the oracle run of the default sweep (256 N(0,1) windows of 64
/// values, seed 0), which gave a median contrast error of 7.3247e-4 at t = 1
/// and 1.6896e-2 at t = 64, a ratio of 23.07.
const HALF_RATIO_MIN: f64 = 10.0;
const FROZEN_HALF_RATIO: f64 = 23.07;
const SINGLE_MAX_ERR: f64 = 1e-5;
const SWEEP_GRID: [f64; 7] = [0.25, 1.0, 4.0, 16.0, 64.0, 256.0, 1024.0];

fn precision_study() -> Verdict {
    let windows = sample_sweep_windows(256, 64, 0).unwrap();
    let rows = lae_precision_sweep(
        &windows,
        &SWEEP_GRID,
        &[PrecisionTag::Half, PrecisionTag::Single],
    )
    .unwrap();
    let cell = |t: f64, p: PrecisionTag| -> &SweepRow {
        rows.iter()
            .find(|r| r.temperature == t && r.precision == p)
            .unwrap()
    };
    let ratio = cell(64.0, PrecisionTag::Half).contrast_median
        / cell(1.0, PrecisionTag::Half).contrast_median;
    let single = rows.iter().filter(|r| r.precision == PrecisionTag::Single);
    let (worst_t, worst) = single
        .clone()
        .map(|r| (r.temperature, r.contrast_max))
        .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let single_ok = worst <= SINGLE_MAX_ERR;
    let ratio_ok = ratio >= HALF_RATIO_MIN && (ratio - FROZEN_HALF_RATIO).abs() < 0.01;
    let last_ok_t = single
        .clone()
        .filter(|r| r.contrast_max <= SINGLE_MAX_ERR)
        .map(|r| r.temperature)
        .fold(0.0, f64::max);
    // the uncentred gradient norm flips which clause fails; reported, not judged
    let plain_ratio =
        cell(64.0, PrecisionTag::Half).grad_median / cell(1.0, PrecisionTag::Half).grad_median;
    let plain_single = single.map(|r| r.grad_max).fold(0.0, f64::max);
    verdict(
        ratio_ok && single_ok,
        format!(
            "half median err t=64 / t=1 = {ratio:.2} (>= {HALF_RATIO_MIN}, {}); single max err {worst:.2e} at t={worst_t} (<= {SINGLE_MAX_ERR:.0e} holds only up to t={last_ok_t}, {}); uncentred metric: ratio {plain_ratio:.2}, single max {plain_single:.1e}",
            if ratio_ok { "ok" } else { "FAILED" },
            if single_ok { "ok" } else { "FAILED" },
        ),
    )
}

// ------------------------------------------------------------------ 8

const SEEDS: u64 = 10;
const ACC_MARGIN: f64 = 0.01;
const TRAIN_BUDGET: Duration = Duration::from_secs(600);

fn training_property() -> Verdict {
    let start = Instant::now();
    let mut acc_gap = Vec::new();
    let mut loss_gap = Vec::new();
    let (mut acc_lae, mut acc_avg) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let task = SyntheticTask::default().with_seed(seed);
        let train_set = generate_dataset(&task, 1024).unwrap();
        let eval_set = generate_dataset(&task.with_seed(seed ^ EVAL_SEED_MASK), 512).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let run = |pool: PoolConfig| {
            let spec = pool.build(task.classes, task.height * task.width).unwrap();
            let model = TinyModel::new(task.classes, task.features, spec, seed).unwrap();
            train(model, &train_set, &eval_set, &cfg).unwrap().1
        };
        let lae4 = run(PoolConfig::lae(TemperatureMode::Shared, 4.0));
        let lae1 = run(PoolConfig::lae(TemperatureMode::Shared, 1.0));
        let avg = run(PoolConfig::new(PoolKind::Avg));
        let (a, b) = (
            lae4.last().unwrap().eval_accuracy,
            avg.last().unwrap().eval_accuracy,
        );
        acc_lae.push(a);
        acc_avg.push(b);
        acc_gap.push(a - b);
        loss_gap.push(lae1[0].train_loss - avg[0].train_loss);
    }
    let elapsed = start.elapsed();
    let acc = median(&mut acc_gap);
    let loss = median(&mut loss_gap);
    verdict(
        acc >= -ACC_MARGIN && loss <= 0.0 && elapsed < TRAIN_BUDGET,
        format!(
            "{SEEDS} seeds: median acc lae(t0=4) {:.3} vs avg {:.3}, median gap {acc:+.3} >= -{ACC_MARGIN}; median epoch-1 loss gap lae(t0=1)-avg {loss:+.2e} <= 0; {elapsed:.1?} < {TRAIN_BUDGET:?}",
            median(&mut acc_lae),
            median(&mut acc_avg),
        ),
    )
}

// ------------------------------------------------------------------ 9

fn decay_exclusion() -> Verdict {
    let task = SyntheticTask::default();
    let train_set = generate_dataset(&task, 256).unwrap();
    let eval_set = generate_dataset(&task.with_seed(EVAL_SEED_MASK), 64).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        weight_decay: 0.1,
        temp_lr_multiplier: 0.0,
        ..TrainConfig::default()
    };
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();

    // a full epoch where pooling parameters see decay but no data step
    let mut ok = true;
    let mut weights_moved = true;
    for pool in [
        PoolConfig::lae(TemperatureMode::PerChannel, 4.0),
        PoolConfig::lae(TemperatureMode::Shared, 0.3),
        PoolConfig {
            alpha0: 0.8,
            ..PoolConfig::new(PoolKind::Mixed)
        },
    ] {
        let model = TinyModel::new(4, 8, pool.build(4, 64).unwrap(), 9).unwrap();
        let (out, _) = train(model.clone(), &train_set, &eval_set, &cfg).unwrap();
        ok &= out.pool == model.pool;
        if let (PoolSpec::Lae(a), PoolSpec::Lae(b)) = (&out.pool, &model.pool) {
            ok &= bits(a.log_t()) == bits(b.log_t());
        }
        weights_moved &= out.weights != model.weights;
    }

    // decay alone: zero data gradient for every parameter
    let mut model = TinyModel::new(
        4,
        8,
        PoolConfig::lae(TemperatureMode::PerChannel, 4.0)
            .build(4, 64)
            .unwrap(),
        9,
    )
    .unwrap();
    let before = model.clone();
    let zero = ModelGradients {
        weights: vec![0.0; 32],
        bias: vec![0.0; 4],
        log_t: vec![0.0; 4],
        pre_alpha: vec![],
        gate_w: vec![],
    };
    let decay_only = TrainConfig {
        weight_decay: 0.1,
        ..TrainConfig::default()
    };
    for _ in 0..train_set.len().div_ceil(decay_only.batch_size) {
        sgd_step(&mut model, &zero, &decay_only);
    }
    let log_t = |m: &TinyModel| match &m.pool {
        PoolSpec::Lae(t) => bits(t.log_t()),
        _ => unreachable!(),
    };
    ok &= log_t(&model) == log_t(&before);
    weights_moved &= model.weights != before.weights;

    verdict(
        ok && weights_moved,
        format!("log_t / pre_alpha bit-identical across a decayed epoch: {ok}; weights decayed: {weights_moved}"),
    )
}

// ------------------------------------------------------------------ 10

const ADAPTIVITY_TOL: f64 = 1e-12;

fn adaptivity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut lae_spread: f64 = 0.0;
    let mut lse_step: f64 = 0.0;
    for _ in 0..20 {
        let c: f64 = rng.random_range(-5.0..5.0);
        let t = 2f64.powf(rng.random_range(-3.0..3.0));
        let lae_spec = PoolSpec::Lae(TemperatureParam::fixed(t).unwrap());
        let mut lae_vals = Vec::new();
        let mut lse_vals = Vec::new();
        for side in [2, 4, 8] {
            let x = Tensor::filled(Shape::new(1, 1, side, side), c).unwrap();
            lae_vals.push(global_pool(&x, &lae_spec).unwrap().data()[0]);
            lse_vals.push(global_pool(&x, &PoolSpec::Lse).unwrap().data()[0]);
        }
        lae_spread = lae_spread.max(lae_vals.iter().map(|v| (v - c).abs()).fold(0.0, f64::max));
        // each step quadruples the window, so LSE must rise by ln 4
        lse_step = lse_step.max((lse_vals[0] - (c + 4f64.ln())).abs());
        for w in lse_vals.windows(2) {
            lse_step = lse_step.max((w[1] - w[0] - 4f64.ln()).abs());
        }
    }
    verdict(
        lae_spread <= ADAPTIVITY_TOL && lse_step <= ADAPTIVITY_TOL,
        format!("sizes 2x2,4x4,8x8: LAE max |y-c| {lae_spread:.1e}; LSE max |step - ln4| {lse_step:.1e} <= {ADAPTIVITY_TOL:.0e}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("2x2 example golden values", example_matrix_golden),
        ("constant-vector identities", constant_identities),
        ("gradient oracle suite", gradient_oracle),
        ("limit theorems", limit_theorems),
        ("superclass consistency", superclass_consistency),
        ("kernel stability", kernel_stability),
        ("precision study", precision_study),
        ("training property", training_property),
        ("weight-decay exclusion", decay_exclusion),
        ("size adaptivity", adaptivity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<28} {} | {}",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
