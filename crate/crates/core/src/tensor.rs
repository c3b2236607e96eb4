//! Dense rank-4 tensors in batch/channel/height/width layout.
//!
//! Storage is always `f64`. The [`PrecisionTag`] records which arithmetic the
//! pooling kernels should emulate when they reduce over a window; rounding to
//! binary16 or binary32 happens in [`crate::precision`], never here.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Element precision emulated by the reduction kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub enum PrecisionTag {
    /// IEEE 754 binary16, round to nearest even.
    Half,
    /// IEEE 754 binary32.
    Single,
    /// IEEE 754 binary64 (native).
    #[default]
    Double,
}

impl PrecisionTag {
    pub const ALL: [PrecisionTag; 3] = [
        PrecisionTag::Half,
        PrecisionTag::Single,
        PrecisionTag::Double,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrecisionTag::Half => "half",
            PrecisionTag::Single => "single",
            PrecisionTag::Double => "double",
        }
    }
}

impl fmt::Display for PrecisionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrecisionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "half" | "fp16" | "f16" => Ok(PrecisionTag::Half),
            "single" | "fp32" | "f32" => Ok(PrecisionTag::Single),
            "double" | "fp64" | "f64" => Ok(PrecisionTag::Double),
            other => Err(Error::InvalidArgument(format!(
                "unknown precision `{other}`"
            ))),
        }
    }
}

/// Tensor extents. `height * width` is the global pooling window size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn volume(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Number of elements in one spatial window.
    pub fn window(&self) -> usize {
        self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::EmptyShape(self.dims()));
        }
        Ok(())
    }
}

/// Immutable dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    precision: PrecisionTag,
}

impl Tensor {
    /// Builds a tensor from values in canonical batch→channel→height→width order.
    pub fn from_vec(shape: Shape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.volume() {
            return Err(Error::LengthMismatch {
                shape: shape.dims(),
                expected: shape.volume(),
                got: values.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: values,
            precision: PrecisionTag::Double,
        })
    }

    pub fn from_slice(shape: Shape, values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.to_vec())
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![0.0; shape.volume()],
            precision: PrecisionTag::Double,
        })
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        shape.validate()?;
        Ok(Tensor {
            shape,
            data: vec![value; shape.volume()],
            precision: PrecisionTag::Double,
        })
    }

    /// Returns the same data tagged with a different emulated precision.
    pub fn with_precision(mut self, precision: PrecisionTag) -> Self {
        self.precision = precision;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn precision(&self) -> PrecisionTag {
        self.precision
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The `height * width` values of channel `c` of sample `b`, row-major.
    pub fn spatial_slice(&self, b: usize, c: usize) -> Result<&[f64]> {
        if b >= self.shape.batch || c >= self.shape.channels {
            return Err(Error::IndexOutOfRange {
                batch: b,
                channel: c,
                shape: self.shape.dims(),
            });
        }
        let n = self.shape.window();
        let start = (b * self.shape.channels + c) * n;
        Ok(&self.data[start..start + n])
    }

    /// Iterates over all windows in canonical (batch, channel) order.
    pub fn windows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.shape.window())
    }

    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> Option<f64> {
        let s = self.shape;
        if b >= s.batch || c >= s.channels || h >= s.height || w >= s.width {
            return None;
        }
        Some(self.data[((b * s.channels + c) * s.height + h) * s.width + w])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
