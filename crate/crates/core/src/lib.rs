//! Multi-output Gaussian process surrogates with adaptive pairwise
//! regularization, boundary-seeking adaptive sampling and scenario analysis.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod benchmarks;
pub mod covariance;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod math;
pub mod model;
pub mod ntm;
pub mod sampler;
pub mod verify;

pub use analysis::{AnalysisConfig, BoundaryPair, ModeLabel, SubCluster};
pub use benchmarks::{NoiseSpec, Oracle, OracleSurface, SuiteId};
pub use covariance::KernelKind;
pub use error::{Error, Result};
pub use experiment::{run_experiment, Command, ExperimentConfig, ExperimentKind, Manifest, SeedMode};
pub use gp::{Dataset, GpModel, HyperParameters, Surrogate, TrainConfig};
pub use model::{FittedModel, ModelKind, ModelTrainer};
pub use ntm::{RegularizationConfig, RegularizationState};
pub use sampler::{SamplerConfig, SamplingRecord, SamplingSchedule, Stage, TestingSpace};
