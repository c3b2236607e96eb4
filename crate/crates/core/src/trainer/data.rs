use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Where the class signal is planted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Exactly one site per sample.
    SingleSite,
    /// Between 2 and `max_sites` distinct sites per sample.
    MultiSite { max_sites: usize },
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::SingleSite => f.write_str("single"),
            Placement::MultiSite { max_sites } => write!(f, "multi:{max_sites}"),
        }
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Placement::SingleSite),
            "multi" => Ok(Placement::MultiSite { max_sites: 3 }),
            other => other
                .strip_prefix("multi:")
                .and_then(|n| n.parse().ok())
                .map(|max_sites| Placement::MultiSite { max_sites })
                .ok_or_else(|| Error::InvalidArgument(format!("unknown placement `{other}`"))),
        }
    }
}

/// "Feature anywhere in space" classification task.
///
/// Every site carries Gaussian noise on every feature channel. One (or a few)
/// uniformly chosen sites additionally carry `signal_strength` on the feature
/// channel matching the label, so the label is decided by the presence of the
/// signal at any site.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub classes: usize,
    /// Input feature channels; must be at least `classes`.
    pub features: usize,
    pub height: usize,
    pub width: usize,
    pub signal_strength: f64,
    pub noise_std: f64,
    pub placement: Placement,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            classes: 4,
            features: 8,
            height: 8,
            width: 8,
            signal_strength: 3.0,
            noise_std: 1.0,
            placement: Placement::SingleSite,
            seed: 0,
        }
    }
}

impl SyntheticTask {
    pub fn with_seed(&self, seed: u64) -> Self {
        SyntheticTask {
            seed,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::InvalidArgument(
                "task needs at least one class".into(),
            ));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("task grid must be non-empty".into()));
        }
        if self.features < self.classes {
            return Err(Error::InvalidArgument(format!(
                "{} feature channels cannot encode {} classes",
                self.features, self.classes
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite())
            || !self.signal_strength.is_finite()
        {
            return Err(Error::InvalidArgument(
                "signal and noise must be finite, noise non-negative".into(),
            ));
        }
        if let Placement::MultiSite { max_sites } = self.placement {
            if max_sites < 2 || max_sites > self.height * self.width {
                return Err(Error::InvalidArgument(format!(
                    "multi-site placement needs 2 ≤ sites ≤ grid, got {max_sites}"
                )));
            }
        }
        Ok(())
    }
}

/// Labelled inputs of shape `(n, features, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The `features * height * width` values of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.inputs.shape();
        let len = s.channels * s.window();
        &self.inputs.data()[i * len..(i + 1) * len]
    }
}

/// Draws `n` samples; identical for identical `(task, n)`.
pub fn generate_dataset(task: &SyntheticTask, n: usize) -> Result<Dataset> {
    task.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "dataset must hold at least one sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let noise =
        Normal::new(0.0, task.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sites = task.height * task.width;
    let shape = Shape::new(n, task.features, task.height, task.width);
    let mut data = Vec::with_capacity(shape.volume());
    let mut labels = Vec::with_capacity(n);

    for _ in 0..n {
        let label = rng.random_range(0..task.classes);
        let start = data.len();
        data.extend((0..task.features * sites).map(|_| noise.sample(&mut rng)));
        let count = match task.placement {
            Placement::SingleSite => 1,
            Placement::MultiSite { max_sites } => rng.random_range(2..=max_sites),
        };
        for site in sample(&mut rng, sites, count) {
            data[start + label * sites + site] += task.signal_strength;
        }
        labels.push(label);
    }

    Ok(Dataset {
        inputs: Tensor::from_vec(shape, data)?,
        labels,
        classes: task.classes,
    })
}
