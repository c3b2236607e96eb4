//! Desk-scale training harness: a synthetic "feature anywhere in space" task,
//! a Conv(1×1)-Pool-Softargmax model, plain SGD, input-resolution robustness
//! and the initial-vs-final temperature study.

pub mod data;
pub mod model;
pub mod robustness;
pub mod study;
pub mod train;

pub use data::{generate_dataset, Dataset, Placement, SyntheticTask};
pub use model::{ModelGradients, PoolConfig, TinyModel};
pub use robustness::{evaluate_robustness, transform_input, Transform};
pub use study::{temperature_trajectory_study, StudyCell, StudySetup, EVAL_SEED_MASK};
pub use train::{accuracy, sgd_step, train, TrainConfig, TrainRecord};
