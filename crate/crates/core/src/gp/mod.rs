//! Single- and multi-output GP regression: likelihood, gradient, posterior and training.

mod dataset;
pub mod kronecker;
pub mod likelihood;
pub mod metrics;
pub mod params;
mod predict;
pub mod snapshot;
pub mod train;

pub use dataset::{split_dataset, split_indices, Dataset, Standardizer};
pub use likelihood::{evaluate, log_marginal_likelihood, mll_gradient, MllEvaluation};
pub use metrics::{rmse, rmse_all};
pub use params::{FixedParams, HyperParameters, ParamLayout, ParamSlot};
pub use predict::{predict, GpModel, IndependentModels, Posterior, Prediction, Surrogate, VARIANCE_CLAMP};
pub use train::{
    fit_model, fit_model_from, optimize, train, train_sogpr, train_sogpr_traced, HeldOut, Penalty, TraceRecord,
    TrainConfig, TrainOutcome, TrainTrace,
};
