//! Analytic derivatives of the pooling operators and of the softargmax
//! cross-entropy head, plus a central finite-difference oracle.
//!
//! All gradients are computed in double precision. Temperature gradients are
//! taken with respect to `log t`, the stored parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pooling::{
    gate_alpha, pool_avg, pool_gated, pool_lae, pool_max, pool_mixed, sigmoid, softargmax, PoolSpec,
};
use crate::tensor::{Shape, Tensor};

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(t))
    }
}

/// `∂ LAE(z; t) / ∂ z_i = softargmax(z / t)_i`.
pub fn lae_backward_input(z: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
    softargmax(&scaled)
}

/// `∂ LAE(z; t) / ∂ log t = LAE(z; t) − Σ z_i p_i` with `p = softargmax(z / t)`.
///
/// Evaluated as `Σ p_i (LAE − z_i)`, which is exactly zero on constant windows.
pub fn lae_backward_logt(z: &[f64], t: f64) -> Result<f64> {
    let y = pool_lae(z, t)?;
    let p = lae_backward_input(z, t)?;
    Ok(p.iter().zip(z).map(|(p, v)| p * (y - v)).sum())
}

/// One-hot at the first index holding the maximum.
pub fn max_backward(z: &[f64]) -> Result<Vec<f64>> {
    let m = pool_max(z)?;
    let idx = z.iter().position(|&v| v == m).unwrap_or(0);
    let mut g = vec![0.0; z.len()];
    g[idx] = 1.0;
    Ok(g)
}

pub fn avg_backward(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(vec![1.0 / z.len() as f64; z.len()])
}

/// Returns `(∂y/∂z, ∂y/∂pre_alpha)` for `y = α max + (1 − α) avg`.
pub fn mixed_backward(z: &[f64], alpha: f64) -> Result<(Vec<f64>, f64)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidMixingWeight(alpha));
    }
    let gmax = max_backward(z)?;
    let gavg = avg_backward(z)?;
    let d_z = gmax
        .iter()
        .zip(&gavg)
        .map(|(m, a)| alpha * m + (1.0 - alpha) * a)
        .collect();
    let spread = pool_max(z)? - pool_avg(z)?;
    Ok((d_z, spread * alpha * (1.0 - alpha)))
}

/// Returns `(∂y/∂z, ∂y/∂w)` for gated pooling with `α = σ(w · z)`.
pub fn gated_backward(z: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let alpha = gate_alpha(z, w)?;
    let (mut d_z, _) = mixed_backward(z, alpha)?;
    let spread = pool_max(z)? - pool_avg(z)?;
    let k = spread * alpha * (1.0 - alpha);
    for (d, wi) in d_z.iter_mut().zip(w) {
        *d += k * wi;
    }
    let d_w = z.iter().map(|v| k * v).collect();
    Ok((d_z, d_w))
}

/// `−log softargmax(logits)[target]`.
pub fn softargmax_xent(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let lse = crate::pooling::pool_lse(logits)?;
    Ok(lse - logits[target])
}

/// Gradient of [`softargmax_xent`]: `softargmax(logits) − onehot(target)`.
pub fn softargmax_xent_backward(logits: &[f64], target: usize) -> Result<Vec<f64>> {
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let mut p = softargmax(logits)?;
    p[target] -= 1.0;
    Ok(p)
}

/// Central differences `(f(z + h e_i) − f(z − h e_i)) / 2h` for every coordinate.
pub fn finite_diff_oracle<F>(f: F, z: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    finite_diff_scaled(f, z, h, |_| 1.0)
}

/// Central differences with a per-coordinate step `h · scale(z_i)`.
pub fn finite_diff_scaled<F, S>(f: F, z: &[f64], h: f64, scale: S) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
    S: Fn(f64) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    let mut probe = z.to_vec();
    Ok((0..z.len())
        .map(|i| {
            let step = h * scale(z[i]);
            probe[i] = z[i] + step;
            let up = f(&probe);
            probe[i] = z[i] - step;
            let down = f(&probe);
            probe[i] = z[i];
            (up - down) / (2.0 * step)
        })
        .collect())
}

/// Gradients of a global pooling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolGradients {
    /// Same shape as the pooled input.
    pub d_input: Tensor,
    /// One entry per trainable temperature; empty for fixed or non-LAE specs.
    pub d_log_t: Vec<f64>,
    /// One entry per channel for mixed pooling, otherwise empty.
    pub d_pre_alpha: Vec<f64>,
    /// Gate weight gradient for gated pooling, otherwise empty.
    pub d_gate_w: Vec<f64>,
}

/// Backward pass of [`crate::pooling::global_pool`].
///
/// `upstream` holds `∂L/∂y` with shape `(batch, channels, 1, 1)`. Parameter
/// gradients are summed over the batch (and over channels for shared
/// parameters).
pub fn global_pool_backward(
    x: &Tensor,
    spec: &PoolSpec,
    upstream: &Tensor,
) -> Result<PoolGradients> {
    let shape = x.shape();
    spec.check_shape(shape)?;
    let expected = Shape::new(shape.batch, shape.channels, 1, 1);
    if upstream.shape() != expected {
        return Err(Error::SizeMismatch {
            what: "upstream gradient",
            expected: expected.volume(),
            got: upstream.shape().volume(),
        });
    }

    let channels = shape.channels;
    let window = shape.window();
    let mut d_input = Vec::with_capacity(shape.volume());
    let mut d_log_t = match spec {
        PoolSpec::Lae(temp) if temp.is_trainable() => vec![0.0; temp.log_t().len()],
        _ => Vec::new(),
    };
    let mut d_pre_alpha = match spec {
        PoolSpec::Mixed(m) => vec![0.0; m.pre_alpha.len()],
        _ => Vec::new(),
    };
    let mut d_gate_w = match spec {
        PoolSpec::Gated(g) => vec![0.0; g.w.len()],
        _ => Vec::new(),
    };

    for (i, (z, &g)) in x.windows().zip(upstream.data()).enumerate() {
        let c = i % channels;
        let local = match spec {
            PoolSpec::Max => max_backward(z)?,
            PoolSpec::Avg => avg_backward(z)?,
            PoolSpec::Lse => lae_backward_input(z, 1.0)?,
            PoolSpec::Lae(temp) => {
                let t = temp.temperature(c);
                if temp.is_trainable() {
                    d_log_t[temp.index_for(c)] += g * lae_backward_logt(z, t)?;
                }
                lae_backward_input(z, t)?
            }
            PoolSpec::Mixed(m) => {
                let (d_z, d_a) = mixed_backward(z, m.alpha(c))?;
                d_pre_alpha[c] += g * d_a;
                d_z
            }
            PoolSpec::Gated(gate) => {
                let (d_z, d_w) = gated_backward(z, &gate.w)?;
                for (acc, v) in d_gate_w.iter_mut().zip(d_w) {
                    *acc += g * v;
                }
                d_z
            }
        };
        debug_assert_eq!(local.len(), window);
        d_input.extend(local.into_iter().map(|v| g * v));
    }

    Ok(PoolGradients {
        d_input: Tensor::from_vec(shape, d_input)?,
        d_log_t,
        d_pre_alpha,
        d_gate_w,
    })
}

/// Worst-case relative disagreement `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Settings for [`run_gradcheck`].
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Random windows per (operator, parameter) row.
    pub cases: usize,
    /// Relative tolerance on every case.
    pub tolerance: f64,
    /// Base finite-difference step; coordinate `i` uses `h · (|z_i| + 1)`.
    pub step: f64,
    pub temperatures: Vec<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            cases: 200,
            tolerance: 1e-5,
            step: 1e-5,
            temperatures: vec![0.25, 1.0, 4.0, 16.0],
        }
    }
}

/// Result of one row of the gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub operator: &'static str,
    pub param: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

const MIN_LEN: usize = 2;
const MAX_LEN: usize = 64;
// finite differences straddle a kink if the top two values are this close
const KINK_MARGIN: f64 = 1e-3;

fn random_window(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(MIN_LEN..=MAX_LEN);
    (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
}

// max, mixed and gated are piecewise smooth; keep the top two values apart
fn random_smooth_window(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let z = random_window(rng);
        let mut sorted = z.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[0] - sorted[1] > KINK_MARGIN {
            return z;
        }
    }
}

fn scale(v: f64) -> f64 {
    v.abs() + 1.0
}

/// Compares every analytic backward pass against central finite differences
/// on random windows (lengths 2 to 64, values in [-5, 5]).
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<Vec<GradCheckRow>> {
    if cfg.cases == 0 {
        return Err(Error::InvalidArgument(
            "gradcheck needs at least one case".into(),
        ));
    }
    if !(cfg.tolerance > 0.0 && cfg.tolerance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid tolerance {}",
            cfg.tolerance
        )));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::InvalidStep(cfg.step));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.step;
    let mut rows = Vec::new();
    let mut push = |operator, param: String, worst: f64| {
        rows.push(GradCheckRow {
            operator,
            param,
            cases: cfg.cases,
            max_rel_error: worst,
            tolerance: cfg.tolerance,
        });
    };

    for &t in &cfg.temperatures {
        check_temperature(t)?;
        let (mut worst_in, mut worst_t) = (0.0_f64, 0.0_f64);
        for _ in 0..cfg.cases {
            let z = random_window(&mut rng);
            let analytic = lae_backward_input(&z, t)?;
            let numeric = finite_diff_scaled(|v| pool_lae(v, t).unwrap(), &z, h, scale)?;
            worst_in = worst_in.max(relative_error(&analytic, &numeric));

            let log_t = t.ln();
            let d_logt = lae_backward_logt(&z, t)?;
            let fd = finite_diff_scaled(|s| pool_lae(&z, s[0].exp()).unwrap(), &[log_t], h, scale)?;
            worst_t = worst_t.max(relative_error(&[d_logt], &fd));
        }
        push("lae", format!("input,t={t}"), worst_in);
        push("lae", format!("log_t,t={t}"), worst_t);
    }

    let mut worst = [0.0_f64; 6];
    for _ in 0..cfg.cases {
        let z = random_smooth_window(&mut rng);

        let fd_max = finite_diff_scaled(|v| pool_max(v).unwrap(), &z, h, scale)?;
        worst[0] = worst[0].max(relative_error(&max_backward(&z)?, &fd_max));

        let fd_avg = finite_diff_scaled(|v| pool_avg(v).unwrap(), &z, h, scale)?;
        worst[1] = worst[1].max(relative_error(&avg_backward(&z)?, &fd_avg));

        let pre: f64 = rng.random_range(-3.0..3.0);
        let alpha = sigmoid(pre);
        let (d_z, d_pre) = mixed_backward(&z, alpha)?;
        let fd_z = finite_diff_scaled(|v| pool_mixed(v, alpha).unwrap(), &z, h, scale)?;
        let fd_pre =
            finite_diff_scaled(|p| pool_mixed(&z, sigmoid(p[0])).unwrap(), &[pre], h, scale)?;
        worst[2] = worst[2].max(relative_error(&d_z, &fd_z));
        worst[3] = worst[3].max(relative_error(&[d_pre], &fd_pre));

        let w: Vec<f64> = (0..z.len()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let (d_z, d_w) = gated_backward(&z, &w)?;
        let fd_z = finite_diff_scaled(|v| pool_gated(v, &w).unwrap(), &z, h, scale)?;
        let fd_w = finite_diff_scaled(|v| pool_gated(&z, v).unwrap(), &w, h, scale)?;
        worst[4] = worst[4].max(relative_error(&d_z, &fd_z));
        worst[5] = worst[5].max(relative_error(&d_w, &fd_w));
    }
    push("max", "input".into(), worst[0]);
    push("avg", "input".into(), worst[1]);
    push("mixed", "input".into(), worst[2]);
    push("mixed", "pre_alpha".into(), worst[3]);
    push("gated", "input".into(), worst[4]);
    push("gated", "gate_w".into(), worst[5]);

    let mut worst_xent = 0.0_f64;
    for _ in 0..cfg.cases {
        let k = rng.random_range(2..=16);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let target = rng.random_range(0..k);
        let analytic = softargmax_xent_backward(&logits, target)?;
        let numeric =
            finite_diff_scaled(|v| softargmax_xent(v, target).unwrap(), &logits, h, scale)?;
        worst_xent = worst_xent.max(relative_error(&analytic, &numeric));
    }
    push("softargmax_xent", "logits".into(), worst_xent);

    Ok(rows)
}
