//! Log-sum-exp kernels with emulated reduced-precision arithmetic.
//!
//! Every kernel here runs on `f64` storage. Under [`PrecisionTag::Half`] and
//! [`PrecisionTag::Single`] the result of each elementary operation (subtract,
//! divide, multiply, `exp`, `ln`, and every accumulation step) is rounded to
//! the target format before it is used again. Accumulation always runs in
//! canonical index order.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::PrecisionTag;

const HALF_MAX: f64 = 65504.0;
const HALF_MIN_EXP: i32 = -14;
const HALF_MANTISSA_BITS: i32 = 10;

/// Rounds `x` to the nearest IEEE 754 binary16 value, ties to even.
///
/// Magnitudes that round above 65504 become infinite, subnormals are kept,
/// NaN passes through.
pub fn round_half(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let a = x.abs();
    let biased = ((a.to_bits() >> 52) & 0x7ff) as i32;
    let exp = (biased - 1023).max(HALF_MIN_EXP);
    let ulp = pow2(exp - HALF_MANTISSA_BITS);
    let r = (a / ulp).round_ties_even() * ulp;
    let r = if r > HALF_MAX { f64::INFINITY } else { r };
    r.copysign(x)
}

/// Rounds `x` to binary32 (round to nearest even).
pub fn round_single(x: f64) -> f64 {
    x as f32 as f64
}

/// Rounds `x` to the format named by `precision`.
pub fn round_to(x: f64, precision: PrecisionTag) -> f64 {
    match precision {
        PrecisionTag::Half => round_half(x),
        PrecisionTag::Single => round_single(x),
        PrecisionTag::Double => x,
    }
}

// exact power of two for the exponent range used by `round_half`
fn pow2(e: i32) -> f64 {
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Which log-sum-exp formulation to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelVariant {
    /// Shift by the window maximum before exponentiating.
    #[default]
    Stable,
    /// Exponentiate the raw inputs. Overflows for large logits.
    Naive,
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelVariant::Stable => "stable",
            KernelVariant::Naive => "naive",
        })
    }
}

impl FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(KernelVariant::Stable),
            "naive" => Ok(KernelVariant::Naive),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel variant `{other}`"
            ))),
        }
    }
}

/// Arithmetic that rounds every result to one precision.
#[derive(Debug, Clone, Copy)]
struct Arith(PrecisionTag);

impl Arith {
    #[inline]
    fn r(self, x: f64) -> f64 {
        round_to(x, self.0)
    }
    #[inline]
    fn add(self, a: f64, b: f64) -> f64 {
        self.r(a + b)
    }
    #[inline]
    fn sub(self, a: f64, b: f64) -> f64 {
        self.r(a - b)
    }
    #[inline]
    fn mul(self, a: f64, b: f64) -> f64 {
        self.r(a * b)
    }
    #[inline]
    fn div(self, a: f64, b: f64) -> f64 {
        self.r(a / b)
    }
    #[inline]
    fn exp(self, a: f64) -> f64 {
        self.r(a.exp())
    }
    #[inline]
    fn ln(self, a: f64) -> f64 {
        self.r(a.ln())
    }
}

/// Intermediate values of one LAE evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
struct LaeTrace {
    value: f64,
    temperature: f64,
    exps: Vec<f64>,
    sum: f64,
}

fn lae_trace(
    z: &[f64],
    t: f64,
    variant: KernelVariant,
    precision: PrecisionTag,
) -> Result<LaeTrace> {
    if z.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidTemperature(t));
    }
    let ar = Arith(precision);
    let t = ar.r(t);
    let log_n = ar.r((z.len() as f64).ln());

    let (shift, exps) = match variant {
        KernelVariant::Stable => {
            let zs: Vec<f64> = z.iter().map(|&v| ar.r(v)).collect();
            let shift = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps = zs
                .iter()
                .map(|&v| ar.exp(ar.div(ar.sub(v, shift), t)))
                .collect::<Vec<_>>();
            (shift, exps)
        }
        KernelVariant::Naive => {
            let exps = z.iter().map(|&v| ar.exp(ar.div(ar.r(v), t))).collect();
            (0.0, exps)
        }
    };
    let sum = exps.iter().fold(0.0, |acc, &e| ar.add(acc, e));
    let scaled = ar.mul(t, ar.sub(ar.ln(sum), log_n));
    let value = match variant {
        KernelVariant::Stable => ar.add(shift, scaled),
        KernelVariant::Naive => scaled,
    };
    Ok(LaeTrace {
        value,
        temperature: t,
        exps,
        sum,
    })
}

/// `log Σ exp(z_i)` under the given variant and emulated precision.
///
/// The naive variant returns `+inf` on overflow rather than an error.
pub fn lse_kernel(z: &[f64], variant: KernelVariant, precision: PrecisionTag) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let ar = Arith(precision);
    match variant {
        KernelVariant::Stable => {
            let zs: Vec<f64> = z.iter().map(|&v| ar.r(v)).collect();
            let shift = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum = zs
                .iter()
                .fold(0.0, |acc, &v| ar.add(acc, ar.exp(ar.sub(v, shift))));
            Ok(ar.add(shift, ar.ln(sum)))
        }
        KernelVariant::Naive => {
            let sum = z.iter().fold(0.0, |acc, &v| ar.add(acc, ar.exp(ar.r(v))));
            Ok(ar.ln(sum))
        }
    }
}

/// `t · (LSE(z / t) − log n)` under the given variant and emulated precision.
pub fn lae_kernel(
    z: &[f64],
    t: f64,
    variant: KernelVariant,
    precision: PrecisionTag,
) -> Result<f64> {
    lae_trace(z, t, variant, precision).map(|tr| tr.value)
}

/// Forward value and input gradient of LAE, with the backward pass run in the
/// same emulated precision as the forward pass.
///
/// The backward follows the elementary operations of the forward kernel in
/// reverse: the upstream gradient is scaled by `t`, divided by the
/// accumulated sum, multiplied by each exponential and finally divided by `t`.
pub fn lae_forward_backward(
    z: &[f64],
    t: f64,
    upstream: f64,
    precision: PrecisionTag,
) -> Result<(f64, Vec<f64>)> {
    let tr = lae_trace(z, t, KernelVariant::Stable, precision)?;
    let ar = Arith(precision);
    let g_scaled = ar.mul(ar.r(upstream), tr.temperature);
    let g_sum = ar.div(g_scaled, tr.sum);
    let grad = tr
        .exps
        .iter()
        .map(|&e| ar.div(ar.mul(g_sum, e), tr.temperature))
        .collect();
    Ok((tr.value, grad))
}

/// Aggregated error of one (temperature, precision) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub temperature: f64,
    pub precision: PrecisionTag,
    /// |y − y_ref| / max|z|, i.e. forward error relative to the window scale.
    pub forward_median: f64,
    pub forward_max: f64,
    /// ‖g − g_ref‖ / ‖g_ref‖ over the whole input gradient.
    pub grad_median: f64,
    pub grad_max: f64,
    /// Same norm ratio restricted to the position-dependent part of the
    /// gradient, g − mean(g). This is the part LAE adds over average pooling,
    /// and the part that vanishes first when `exp((z_i − z*)/t)` rounds to 1.
    pub contrast_median: f64,
    pub contrast_max: f64,
}

/// Windows for the precision sweep: standard normal logits snapped to the
/// binary16 grid, so every precision sees identical inputs.
pub fn sample_sweep_windows(count: usize, len: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 || len == 0 {
        return Err(Error::InvalidArgument(
            "sweep needs at least one non-empty window".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            (0..len)
                .map(|_| round_half(StandardNormal.sample(&mut rng)))
                .collect()
        })
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn norm_ratio(approx: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = approx
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).powi(2))
        .sum();
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

struct WindowError {
    forward: f64,
    grad: f64,
    contrast: f64,
}

fn window_error(z: &[f64], t: f64, precision: PrecisionTag) -> Result<WindowError> {
    let (y_ref, g_ref) = lae_forward_backward(z, t, 1.0, PrecisionTag::Double)?;
    let (y, g) = lae_forward_backward(z, t, 1.0, precision)?;
    let scale = z
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    Ok(WindowError {
        forward: (y - y_ref).abs() / scale,
        grad: norm_ratio(&g, &g_ref),
        contrast: norm_ratio(&centered(&g), &centered(&g_ref)),
    })
}

/// Compares emulated-precision LAE against the double-precision reference for
/// every `(t, precision)` pair, aggregating median and max over `windows`.
///
/// Rows come out in `t_grid`-major order. Cells are evaluated in parallel;
/// each cell reduces sequentially so results do not depend on thread count.
pub fn lae_precision_sweep(
    windows: &[Vec<f64>],
    t_grid: &[f64],
    precisions: &[PrecisionTag],
) -> Result<Vec<SweepRow>> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no windows to sweep".into()));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("temperature grid is empty".into()));
    }
    if precisions.is_empty() {
        return Err(Error::InvalidArgument("precision set is empty".into()));
    }
    if let Some(&t) = t_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidTemperature(t));
    }

    let cells: Vec<(f64, PrecisionTag)> = t_grid
        .iter()
        .flat_map(|&t| precisions.iter().map(move |&p| (t, p)))
        .collect();

    cells
        .par_iter()
        .map(|&(t, precision)| {
            let errors = windows
                .iter()
                .map(|z| window_error(z, t, precision))
                .collect::<Result<Vec<_>>>()?;
            let mut fwd: Vec<f64> = errors.iter().map(|e| e.forward).collect();
            let mut grad: Vec<f64> = errors.iter().map(|e| e.grad).collect();
            let mut contrast: Vec<f64> = errors.iter().map(|e| e.contrast).collect();
            let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
            Ok(SweepRow {
                temperature: t,
                precision,
                forward_max: max(&fwd),
                grad_max: max(&grad),
                contrast_max: max(&contrast),
                forward_median: median(&mut fwd),
                grad_median: median(&mut grad),
                contrast_median: median(&mut contrast),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_ties_to_even() {
        assert_eq!(round_half(1.0 + 2f64.powi(-11)), 1.0);
        assert_eq!(
            round_half(1.0 + 3.0 * 2f64.powi(-11)),
            1.0 + 2.0 * 2f64.powi(-10)
        );
        assert_eq!(round_half(-(1.0 + 2f64.powi(-11))), -1.0);
    }

    #[test]
    fn half_overflow_boundary() {
        assert_eq!(round_half(65504.0), 65504.0);
        assert_eq!(round_half(65519.99), 65504.0);
        assert_eq!(round_half(65520.0), f64::INFINITY);
        assert_eq!(round_half(-1e6), f64::NEG_INFINITY);
    }

    #[test]
    fn half_zero_nan_subnormal() {
        assert_eq!(round_half(0.0), 0.0);
        assert!(round_half(-0.0).is_sign_negative());
        assert!(round_half(f64::NAN).is_nan());
        let tiny = 2f64.powi(-24);
        assert_eq!(round_half(tiny), tiny);
        assert_eq!(round_half(3.0 * tiny), 3.0 * tiny);
        assert_eq!(round_half(0.5 * tiny), 0.0);
        assert_eq!(round_half(0.75 * tiny), tiny);
    }

    #[test]
    fn half_matches_reference_conversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20_000 {
            let mag: f64 = rand::Rng::random_range(&mut rng, -30.0..18.0);
            let x = 2f64.powf(mag)
                * if rand::Rng::random_bool(&mut rng, 0.5) {
                    1.0
                } else {
                    -1.0
                };
            let expected = half::f16::from_f64(x).to_f64();
            assert_eq!(round_half(x).to_bits(), expected.to_bits(), "x = {x:e}");
        }
    }

    #[test]
    fn stable_shift_identity() {
        let v = lse_kernel(
            &[1000.0, 1000.0],
            KernelVariant::Stable,
            PrecisionTag::Double,
        )
        .unwrap();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let naive = lse_kernel(
            &[1000.0, 1000.0],
            KernelVariant::Naive,
            PrecisionTag::Double,
        )
        .unwrap();
        assert_eq!(naive, f64::INFINITY);
    }

    #[test]
    fn singleton_zero() {
        for variant in [KernelVariant::Stable, KernelVariant::Naive] {
            for p in PrecisionTag::ALL {
                assert_eq!(lse_kernel(&[0.0], variant, p).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn empty_window_rejected() {
        assert_eq!(
            lse_kernel(&[], KernelVariant::Stable, PrecisionTag::Double),
            Err(Error::EmptyWindow)
        );
        assert!(lae_kernel(&[1.0], 0.0, KernelVariant::Stable, PrecisionTag::Double).is_err());
    }

    #[test]
    fn stable_finite_at_extremes() {
        let z = [1e4, -1e4, 0.0, 9999.5];
        for p in PrecisionTag::ALL {
            // ±1e4 is representable in binary16
            assert!(lse_kernel(&z, KernelVariant::Stable, p)
                .unwrap()
                .is_finite());
            assert!(lae_kernel(&z, 3.0, KernelVariant::Stable, p)
                .unwrap()
                .is_finite());
        }
    }

    #[test]
    fn double_backward_is_softargmax() {
        let (y, g) =
            lae_forward_backward(&[-1.0, 0.0, 1.4, 1.6], 1.0, 1.0, PrecisionTag::Double).unwrap();
        assert!((y - 0.953_211_863_824_916).abs() < 1e-12);
        let expected = [
            0.035_454_459_928_079_66,
            0.096_375_214_160_325_66,
            0.390_820_765_267_562_2,
            0.477_349_560_644_060_03,
        ];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_rejects_empty_grids() {
        let w = sample_sweep_windows(2, 4, 0).unwrap();
        assert!(lae_precision_sweep(&w, &[], &[PrecisionTag::Half]).is_err());
        assert!(lae_precision_sweep(&w, &[1.0], &[]).is_err());
        assert!(lae_precision_sweep(&[], &[1.0], &[PrecisionTag::Half]).is_err());
        assert!(lae_precision_sweep(&w, &[-1.0], &[PrecisionTag::Half]).is_err());
    }

    #[test]
    fn double_cell_has_zero_error() {
        let w = sample_sweep_windows(8, 16, 3).unwrap();
        let rows = lae_precision_sweep(&w, &[1.0, 64.0], &[PrecisionTag::Double]).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(r.grad_max, 0.0);
            assert_eq!(r.forward_max, 0.0);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let w = sample_sweep_windows(16, 16, 5).unwrap();
        let grid = [1.0, 16.0, 256.0];
        let precisions = [PrecisionTag::Half, PrecisionTag::Single];
        let a = lae_precision_sweep(&w, &grid, &precisions).unwrap();
        let b = lae_precision_sweep(&w, &grid, &precisions).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn round_half_idempotent(x in -7e4f64..7e4) {
            let r = round_half(x);
            prop_assert_eq!(round_half(r).to_bits(), r.to_bits());
        }

        #[test]
        fn round_half_monotone(a in -7e4f64..7e4, b in -7e4f64..7e4) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(round_half(lo) <= round_half(hi));
        }

        #[test]
        fn stable_agrees_with_naive(z in proptest::collection::vec(-30.0f64..30.0, 1..64)) {
            let s = lse_kernel(&z, KernelVariant::Stable, PrecisionTag::Double).unwrap();
            let n = lse_kernel(&z, KernelVariant::Naive, PrecisionTag::Double).unwrap();
            prop_assert!(n.is_finite());
            prop_assert!((s - n).abs() <= 1e-12 * s.abs().max(1.0));
        }
    }
}
