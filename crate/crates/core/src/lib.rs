//! LogAvgExp global pooling.
//!
//! LogAvgExp (`log(mean(exp(z)))`, optionally with a temperature `t`) is a
//! smooth maximum that stays between the mean and the max of its window and
//! returns `a` for a constant window `[a, …, a]` regardless of window size.
//! This crate provides the forward operators ([`pooling`]), their analytic
//! derivatives ([`grad`]), reduced-precision emulation ([`precision`]), a
//! small synthetic training harness ([`trainer`]) and the report generators
//! behind the `lae` binary ([`cli`]).

pub mod cli;
pub mod error;
pub mod grad;
pub mod pooling;
pub mod precision;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use pooling::{global_pool, PoolKind, PoolSpec, TemperatureMode, TemperatureParam};
pub use tensor::{PrecisionTag, Shape, Tensor};
