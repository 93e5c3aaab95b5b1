//! Differentiation, parameters, optimization and the training harness.

pub mod adam;
pub mod config;
pub mod dropout;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tape;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{Ablation, TrainConfig};
pub use model::{forward, predict, prepare_dataset, BehaviorStats, Prediction, PreparedSubject};
pub use params::{ModelDims, ModelParams};
pub use train::{cross_validate, holdout_split, stratified_folds, train, TrainOutcome};
