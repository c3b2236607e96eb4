//! Global pooling operators: max, average, LogSumExp, LogAvgExp with a
//! temperature, and the mixed/gated max-average baselines.
//!
//! Every operator reduces one channel over its full spatial window, so the
//! kernel size `n` is whatever `height * width` the input has at call time.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::precision::{lae_kernel, lse_kernel, KernelVariant};
use crate::tensor::{PrecisionTag, Shape, Tensor};

/// How a LogAvgExp temperature is stored and trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemperatureMode {
    /// Constant; never touched by an optimizer.
    Fixed,
    /// One trainable temperature shared by all channels.
    Shared,
    /// One trainable temperature per channel.
    PerChannel,
}

impl TemperatureMode {
    pub fn name(self) -> &'static str {
        match self {
            TemperatureMode::Fixed => "fixed",
            TemperatureMode::Shared => "shared",
            TemperatureMode::PerChannel => "per_channel",
        }
    }
}

impl fmt::Display for TemperatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemperatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(TemperatureMode::Fixed),
            "shared" => Ok(TemperatureMode::Shared),
            "per_channel" | "per-channel" => Ok(TemperatureMode::PerChannel),
            other => Err(Error::InvalidArgument(format!(
                "unknown temperature mode `{other}`"
            ))),
        }
    }
}

/// Temperature stored as `log t`, so `t = exp(log_t)` is always positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureParam {
    mode: TemperatureMode,
    log_t: Vec<f64>,
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(t))
    }
}

impl TemperatureParam {
    pub fn fixed(t: f64) -> Result<Self> {
        check_temperature(t)?;
        Ok(TemperatureParam {
            mode: TemperatureMode::Fixed,
            log_t: vec![t.ln()],
        })
    }

    pub fn shared(t0: f64) -> Result<Self> {
        check_temperature(t0)?;
        Ok(TemperatureParam {
            mode: TemperatureMode::Shared,
            log_t: vec![t0.ln()],
        })
    }

    /// Every channel starts at `t0`.
    pub fn per_channel(t0: f64, channels: usize) -> Result<Self> {
        check_temperature(t0)?;
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "per-channel temperature needs at least one channel".into(),
            ));
        }
        Ok(TemperatureParam {
            mode: TemperatureMode::PerChannel,
            log_t: vec![t0.ln(); channels],
        })
    }

    pub fn new(mode: TemperatureMode, t0: f64, channels: usize) -> Result<Self> {
        match mode {
            TemperatureMode::Fixed => Self::fixed(t0),
            TemperatureMode::Shared => Self::shared(t0),
            TemperatureMode::PerChannel => Self::per_channel(t0, channels),
        }
    }

    /// Rebuilds a parameter from stored log-temperatures.
    pub fn from_log(mode: TemperatureMode, log_t: Vec<f64>) -> Result<Self> {
        let ok_len = match mode {
            TemperatureMode::Fixed | TemperatureMode::Shared => log_t.len() == 1,
            TemperatureMode::PerChannel => !log_t.is_empty(),
        };
        if !ok_len {
            return Err(Error::SizeMismatch {
                what: "log_t",
                expected: 1,
                got: log_t.len(),
            });
        }
        if let Some(&bad) = log_t.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidTemperature(bad.exp()));
        }
        Ok(TemperatureParam { mode, log_t })
    }

    pub fn mode(&self) -> TemperatureMode {
        self.mode
    }

    pub fn is_trainable(&self) -> bool {
        self.mode != TemperatureMode::Fixed
    }

    pub fn log_t(&self) -> &[f64] {
        &self.log_t
    }

    pub fn log_t_mut(&mut self) -> &mut [f64] {
        &mut self.log_t
    }

    /// Entry of `log_t` that drives channel `c`.
    pub fn index_for(&self, c: usize) -> usize {
        match self.mode {
            TemperatureMode::PerChannel => c,
            _ => 0,
        }
    }

    pub fn temperature(&self, c: usize) -> f64 {
        self.log_t[self.index_for(c)].exp()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.log_t.iter().map(|v| v.exp()).collect()
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if self.mode == TemperatureMode::PerChannel && self.log_t.len() != channels {
            return Err(Error::SizeMismatch {
                what: "per-channel temperature",
                expected: channels,
                got: self.log_t.len(),
            });
        }
        Ok(())
    }
}

/// Mixed max/avg pooling weights, one unconstrained pre-activation per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedParam {
    pub pre_alpha: Vec<f64>,
}

impl MixedParam {
    /// `alpha` is the initial mixing weight for every channel, in (0, 1).
    pub fn new(alpha: f64, channels: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidMixingWeight(alpha));
        }
        Ok(MixedParam {
            pre_alpha: vec![(alpha / (1.0 - alpha)).ln(); channels],
        })
    }

    pub fn alpha(&self, c: usize) -> f64 {
        sigmoid(self.pre_alpha[c])
    }
}

/// Gated max/avg pooling: `alpha = sigmoid(w · z)`, no bias term.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParam {
    pub w: Vec<f64>,
}

/// Operator selection together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolSpec {
    Max,
    Avg,
    Lse,
    Lae(TemperatureParam),
    Mixed(MixedParam),
    Gated(GateParam),
}

/// Parameter-free name of a pooling operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
    Lse,
    Lae,
    Mixed,
    Gated,
}

impl PoolKind {
    pub const ALL: [PoolKind; 6] = [
        PoolKind::Max,
        PoolKind::Avg,
        PoolKind::Lse,
        PoolKind::Lae,
        PoolKind::Mixed,
        PoolKind::Gated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
            PoolKind::Lse => "lse",
            PoolKind::Lae => "lae",
            PoolKind::Mixed => "mixed",
            PoolKind::Gated => "gated",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoolKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown pool kind `{s}`")))
    }
}

impl PoolSpec {
    pub fn kind(&self) -> PoolKind {
        match self {
            PoolSpec::Max => PoolKind::Max,
            PoolSpec::Avg => PoolKind::Avg,
            PoolSpec::Lse => PoolKind::Lse,
            PoolSpec::Lae(_) => PoolKind::Lae,
            PoolSpec::Mixed(_) => PoolKind::Mixed,
            PoolSpec::Gated(_) => PoolKind::Gated,
        }
    }

    /// True when the operator accepts any spatial size.
    pub fn is_size_adaptive(&self) -> bool {
        !matches!(self, PoolSpec::Gated(_))
    }

    /// Checks that parameter blocks fit an input of the given shape.
    pub fn check_shape(&self, shape: Shape) -> Result<()> {
        match self {
            PoolSpec::Lae(temp) => temp.check_channels(shape.channels),
            PoolSpec::Mixed(m) if m.pre_alpha.len() != shape.channels => Err(Error::SizeMismatch {
                what: "mixing pre-activation",
                expected: shape.channels,
                got: m.pre_alpha.len(),
            }),
            PoolSpec::Gated(g) if g.w.len() != shape.window() => Err(Error::SizeMismatch {
                what: "gate weights",
                expected: shape.window(),
                got: g.w.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Applies the operator to one window belonging to channel `c`.
    pub fn pool_window(&self, z: &[f64], c: usize) -> Result<f64> {
        self.pool_window_with(z, c, PrecisionTag::Double)
    }

    fn pool_window_with(&self, z: &[f64], c: usize, precision: PrecisionTag) -> Result<f64> {
        match self {
            PoolSpec::Max => pool_max(z),
            PoolSpec::Avg => pool_avg(z),
            PoolSpec::Lse => {
                non_empty(z)?;
                lse_kernel(z, KernelVariant::Stable, precision)
            }
            PoolSpec::Lae(temp) => {
                lae_kernel(z, temp.temperature(c), KernelVariant::Stable, precision)
            }
            PoolSpec::Mixed(m) => pool_mixed(z, m.alpha(c)),
            PoolSpec::Gated(g) => pool_gated(z, &g.w),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn non_empty(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        Err(Error::EmptyWindow)
    } else {
        Ok(())
    }
}

pub fn pool_max(z: &[f64]) -> Result<f64> {
    non_empty(z)?;
    Ok(z.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn pool_avg(z: &[f64]) -> Result<f64> {
    non_empty(z)?;
    Ok(z.iter().sum::<f64>() / z.len() as f64)
}

/// `log Σ exp(z_i)` via the max-shifted kernel.
pub fn pool_lse(z: &[f64]) -> Result<f64> {
    lse_kernel(z, KernelVariant::Stable, PrecisionTag::Double)
}

/// LogAvgExp with temperature: `t · (LSE(z / t) − log n)`.
pub fn pool_lae(z: &[f64], t: f64) -> Result<f64> {
    lae_kernel(z, t, KernelVariant::Stable, PrecisionTag::Double)
}

/// `alpha · max(z) + (1 − alpha) · mean(z)`.
pub fn pool_mixed(z: &[f64], alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidMixingWeight(alpha));
    }
    Ok(alpha * pool_max(z)? + (1.0 - alpha) * pool_avg(z)?)
}

pub fn gate_alpha(z: &[f64], w: &[f64]) -> Result<f64> {
    if w.len() != z.len() {
        return Err(Error::SizeMismatch {
            what: "gate weights",
            expected: z.len(),
            got: w.len(),
        });
    }
    Ok(sigmoid(w.iter().zip(z).map(|(a, b)| a * b).sum()))
}

/// Mixed pooling whose weight is `sigmoid(w · z)`.
pub fn pool_gated(z: &[f64], w: &[f64]) -> Result<f64> {
    non_empty(z)?;
    pool_mixed(z, gate_alpha(z, w)?)
}

/// Pools every channel of `x` over its whole spatial extent.
///
/// LSE and LAE reduce in the precision carried by `x`; the other operators are
/// exact in double precision. The output has shape `(batch, channels, 1, 1)`
/// and keeps the input's precision tag.
pub fn global_pool(x: &Tensor, spec: &PoolSpec) -> Result<Tensor> {
    let shape = x.shape();
    spec.check_shape(shape)?;
    if !x.is_finite() {
        return Err(Error::InvalidArgument(
            "global_pool input contains non-finite values".into(),
        ));
    }
    let channels = shape.channels;
    let out = x
        .windows()
        .enumerate()
        .map(|(i, z)| spec.pool_window_with(z, i % channels, x.precision()))
        .collect::<Result<Vec<_>>>()?;
    Ok(
        Tensor::from_vec(Shape::new(shape.batch, channels, 1, 1), out)?
            .with_precision(x.precision()),
    )
}

/// Numerically stable softargmax (softmax).
pub fn softargmax(z: &[f64]) -> Result<Vec<f64>> {
    let m = pool_max(z)?;
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Coarse-grains logits: each group becomes the LSE of its members.
///
/// `groups` must partition `0..z.len()` into non-empty sets.
pub fn group_logits(z: &[f64], groups: &[Vec<usize>]) -> Result<Vec<f64>> {
    non_empty(z)?;
    let mut seen = vec![false; z.len()];
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidPartition("empty group".into()));
        }
        for &i in g {
            match seen.get_mut(i) {
                None => return Err(Error::InvalidPartition(format!("index {i} out of range"))),
                Some(true) => {
                    return Err(Error::InvalidPartition(format!("index {i} appears twice")))
                }
                Some(s) => *s = true,
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidPartition(format!(
            "index {missing} not covered"
        )));
    }
    groups
        .iter()
        .map(|g| pool_lse(&g.iter().map(|&i| z[i]).collect::<Vec<_>>()))
        .collect()
}
