use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grad::{global_pool_backward, softargmax_xent, softargmax_xent_backward};
use crate::pooling::{
    global_pool, GateParam, MixedParam, PoolKind, PoolSpec, TemperatureMode, TemperatureParam,
};
use crate::tensor::{Shape, Tensor};

const INIT_STD: f64 = 0.1;

/// Conv(1×1) → global pool → softargmax classifier.
///
/// The 1×1 convolution maps `features` input channels to one channel per
/// class; each class channel is pooled over space and a per-class bias is
/// added to give the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyModel {
    pub classes: usize,
    pub features: usize,
    /// Row-major `classes × features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub pool: PoolSpec,
}

/// Gradients of the mean loss over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub log_t: Vec<f64>,
    pub pre_alpha: Vec<f64>,
    pub gate_w: Vec<f64>,
}

/// Pooling hyper-parameters used to build a [`PoolSpec`] for a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    pub kind: PoolKind,
    pub mode: TemperatureMode,
    pub t0: f64,
    pub alpha0: f64,
}

impl PoolConfig {
    pub fn new(kind: PoolKind) -> Self {
        PoolConfig {
            kind,
            mode: TemperatureMode::Shared,
            t0: 4.0,
            alpha0: 0.5,
        }
    }

    pub fn lae(mode: TemperatureMode, t0: f64) -> Self {
        PoolConfig {
            mode,
            t0,
            ..PoolConfig::new(PoolKind::Lae)
        }
    }

    /// Builds the spec for `channels` pooled channels over `window` sites.
    pub fn build(&self, channels: usize, window: usize) -> Result<PoolSpec> {
        Ok(match self.kind {
            PoolKind::Max => PoolSpec::Max,
            PoolKind::Avg => PoolSpec::Avg,
            PoolKind::Lse => PoolSpec::Lse,
            PoolKind::Lae => PoolSpec::Lae(TemperatureParam::new(self.mode, self.t0, channels)?),
            PoolKind::Mixed => PoolSpec::Mixed(MixedParam::new(self.alpha0, channels)?),
            PoolKind::Gated => PoolSpec::Gated(GateParam {
                w: vec![0.0; window],
            }),
        })
    }
}

impl TinyModel {
    /// Random weights from N(0, 0.1²), zero bias.
    pub fn new(classes: usize, features: usize, pool: PoolSpec, seed: u64) -> Result<Self> {
        if classes == 0 || features == 0 {
            return Err(Error::InvalidArgument(
                "model needs classes and features".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        Ok(TinyModel {
            classes,
            features,
            weights: (0..classes * features)
                .map(|_| normal.sample(&mut rng))
                .collect(),
            bias: vec![0.0; classes],
            pool,
        })
    }

    /// Per-class feature maps for a batch of inputs `(batch, features, h, w)`.
    pub fn feature_maps(&self, inputs: &Tensor) -> Result<Tensor> {
        let s = inputs.shape();
        if s.channels != self.features {
            return Err(Error::SizeMismatch {
                what: "input channels",
                expected: self.features,
                got: s.channels,
            });
        }
        let n = s.window();
        let mut out = vec![0.0; s.batch * self.classes * n];
        for b in 0..s.batch {
            for k in 0..self.classes {
                let dst = &mut out[(b * self.classes + k) * n..][..n];
                for c in 0..self.features {
                    let w = self.weights[k * self.features + c];
                    let src = inputs.spatial_slice(b, c)?;
                    for (d, x) in dst.iter_mut().zip(src) {
                        *d += w * x;
                    }
                }
            }
        }
        Tensor::from_vec(Shape::new(s.batch, self.classes, s.height, s.width), out)
    }

    /// Logits, one row of `classes` values per sample.
    pub fn logits(&self, inputs: &Tensor) -> Result<Vec<Vec<f64>>> {
        let pooled = global_pool(&self.feature_maps(inputs)?, &self.pool)?;
        Ok(pooled
            .data()
            .chunks_exact(self.classes)
            .map(|row| row.iter().zip(&self.bias).map(|(y, b)| y + b).collect())
            .collect())
    }

    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        Ok(self
            .logits(inputs)?
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Mean cross-entropy over the batch and its gradients.
    pub fn loss_and_grad(
        &self,
        inputs: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, ModelGradients)> {
        let s = inputs.shape();
        if labels.len() != s.batch {
            return Err(Error::SizeMismatch {
                what: "labels",
                expected: s.batch,
                got: labels.len(),
            });
        }
        let maps = self.feature_maps(inputs)?;
        if !maps.is_finite() {
            // the caller knows which epoch and batch this was
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                batch: 0,
                loss: f64::NAN,
            });
        }
        let pooled = global_pool(&maps, &self.pool)?;
        let inv_batch = 1.0 / s.batch as f64;

        let mut loss = 0.0;
        let mut d_logits = Vec::with_capacity(s.batch * self.classes);
        for (row, &label) in pooled.data().chunks_exact(self.classes).zip(labels) {
            let logits: Vec<f64> = row.iter().zip(&self.bias).map(|(y, b)| y + b).collect();
            loss += softargmax_xent(&logits, label)?;
            d_logits.extend(
                softargmax_xent_backward(&logits, label)?
                    .into_iter()
                    .map(|g| g * inv_batch),
            );
        }
        loss *= inv_batch;

        let mut d_bias = vec![0.0; self.classes];
        for row in d_logits.chunks_exact(self.classes) {
            for (acc, g) in d_bias.iter_mut().zip(row) {
                *acc += g;
            }
        }

        let upstream = Tensor::from_vec(Shape::new(s.batch, self.classes, 1, 1), d_logits)?;
        let pg = global_pool_backward(&maps, &self.pool, &upstream)?;

        let n = s.window();
        let mut d_weights = vec![0.0; self.classes * self.features];
        for b in 0..s.batch {
            for k in 0..self.classes {
                let dmap = pg.d_input.spatial_slice(b, k)?;
                for c in 0..self.features {
                    let x = inputs.spatial_slice(b, c)?;
                    d_weights[k * self.features + c] +=
                        dmap.iter().zip(x).map(|(g, v)| g * v).sum::<f64>();
                }
            }
        }
        debug_assert_eq!(pg.d_input.shape().window(), n);

        Ok((
            loss,
            ModelGradients {
                weights: d_weights,
                bias: d_bias,
                log_t: pg.d_log_t,
                pre_alpha: pg.d_pre_alpha,
                gate_w: pg.d_gate_w,
            },
        ))
    }

    /// Current temperatures, empty unless the model pools with LAE.
    pub fn temperatures(&self) -> Vec<f64> {
        match &self.pool {
            PoolSpec::Lae(t) => t.temperatures(),
            _ => Vec::new(),
        }
    }
}
