use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pooling::PoolSpec;
use crate::tensor::{Shape, Tensor};
use crate::trainer::data::Dataset;
use crate::trainer::model::TinyModel;
use crate::trainer::train::accuracy;

/// Spatial resampling applied before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Nearest-neighbour resize.
    Zoom,
    /// Center crop, or center the input in a zero-filled canvas.
    CropOrPadZero,
    /// Center crop, or center the input in a canvas of N(0, 1) draws.
    CropOrPadNormal,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Zoom => "zoom",
            Transform::CropOrPadZero => "crop_or_pad_zero",
            Transform::CropOrPadNormal => "crop_or_pad_normal",
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Transform::Zoom,
            Transform::CropOrPadZero,
            Transform::CropOrPadNormal,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown transform `{s}`")))
    }
}

// source index feeding destination index `i` when resampling `from` → `to`
fn nearest(i: usize, from: usize, to: usize) -> usize {
    (((2 * i + 1) * from) / (2 * to)).min(from - 1)
}

/// Resamples every channel of `x` to `size × size`.
///
/// `seed` drives the padding values of [`Transform::CropOrPadNormal`].
pub fn transform_input(x: &Tensor, transform: Transform, size: usize, seed: u64) -> Result<Tensor> {
    if size == 0 {
        return Err(Error::InvalidArgument(
            "target size must be at least 1".into(),
        ));
    }
    let s = x.shape();
    let out_shape = Shape::new(s.batch, s.channels, size, size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(out_shape.volume());

    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = x.spatial_slice(b, c)?;
            for i in 0..size {
                for j in 0..size {
                    let v = match transform {
                        Transform::Zoom => {
                            src[nearest(i, s.height, size) * s.width + nearest(j, s.width, size)]
                        }
                        Transform::CropOrPadZero | Transform::CropOrPadNormal => {
                            // offset of the source grid inside the target grid
                            let oi = size as isize - s.height as isize;
                            let oj = size as isize - s.width as isize;
                            let si = i as isize - oi / 2;
                            let sj = j as isize - oj / 2;
                            if (0..s.height as isize).contains(&si)
                                && (0..s.width as isize).contains(&sj)
                            {
                                src[si as usize * s.width + sj as usize]
                            } else if transform == Transform::CropOrPadNormal {
                                StandardNormal.sample(&mut rng)
                            } else {
                                0.0
                            }
                        }
                    };
                    out.push(v);
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Accuracy of `model` on `data` after resampling inputs to each size in `sizes`.
pub fn evaluate_robustness(
    model: &TinyModel,
    data: &Dataset,
    transform: Transform,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no target sizes given".into()));
    }
    if let PoolSpec::Gated(gate) = &model.pool {
        // the gate has one weight per training-size site
        if let Some(&size) = sizes.iter().find(|&&s| s * s != gate.w.len()) {
            return Err(Error::SizeMismatch {
                what: "gated pooling window",
                expected: gate.w.len(),
                got: size * size,
            });
        }
    }
    sizes
        .iter()
        .map(|&size| {
            let inputs = transform_input(&data.inputs, transform, size, seed)?;
            let resized = Dataset {
                inputs,
                labels: data.labels.clone(),
                classes: data.classes,
            };
            Ok((size, accuracy(model, &resized)?))
        })
        .collect()
}
