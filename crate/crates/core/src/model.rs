//! The three compared model kinds behind one training entry point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    fit_model_from, Dataset, FixedParams, GpModel, HyperParameters, IndependentModels, Prediction, Standardizer,
    Surrogate, TraceRecord, TrainConfig, TrainTrace,
};
use crate::ntm::{RegularizationConfig, RegularizationState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// One GP per output.
    Sogpr,
    /// Joint LMC model without regularization.
    ConventionalMogpr,
    /// Joint LMC model with adaptive pairwise regularization.
    MogprNtm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Sogpr, ModelKind::ConventionalMogpr, ModelKind::MogprNtm];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Sogpr => "sogpr",
            ModelKind::ConventionalMogpr => "conventional-mogpr",
            ModelKind::MogprNtm => "mogpr-ntm",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum FittedModel {
    Joint(GpModel),
    Independent(IndependentModels),
}

impl Surrogate for FittedModel {
    fn outputs(&self) -> usize {
        match self {
            FittedModel::Joint(m) => Surrogate::outputs(m),
            FittedModel::Independent(m) => m.outputs(),
        }
    }

    fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction> {
        match self {
            FittedModel::Joint(m) => Surrogate::predict(m, xq),
            FittedModel::Independent(m) => m.predict(xq),
        }
    }

    fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            FittedModel::Joint(m) => Surrogate::predict_mean(m, xq),
            FittedModel::Independent(m) => m.predict_mean(xq),
        }
    }

    fn output_scale(&self) -> Vec<f64> {
        match self {
            FittedModel::Joint(m) => m.output_scale(),
            FittedModel::Independent(m) => m.output_scale(),
        }
    }
}

/// Zips per-output single-model traces into one multi-output trace.
pub fn merge_traces(traces: &[TrainTrace]) -> TrainTrace {
    let Some(first) = traces.first() else {
        return TrainTrace::default();
    };
    let records = (0..first.records.len())
        .map(|r| {
            let rows: Vec<&TraceRecord> = traces.iter().filter_map(|t| t.records.get(r)).collect();
            TraceRecord {
                iteration: rows[0].iteration,
                neg_mll: rows.iter().map(|x| x.neg_mll).sum(),
                reg_loss: rows.iter().map(|x| x.reg_loss).sum(),
                total_loss: rows.iter().map(|x| x.total_loss).sum(),
                test_rmse: rows.iter().flat_map(|x| x.test_rmse.iter().copied()).collect(),
            }
        })
        .collect();
    TrainTrace { records }
}

/// Fits one model kind repeatedly, warm-starting every fit after the first.
///
/// The regularization state of the NTM variant persists across fits, so its
/// activation, weight and freeze schedule counts total optimizer iterations.
#[derive(Debug, Clone)]
pub struct ModelTrainer {
    pub kind: ModelKind,
    pub train: TrainConfig,
    pub regularization: RegularizationConfig,
    state: Option<RegularizationState>,
    params: Option<Vec<HyperParameters>>,
}

impl ModelTrainer {
    pub fn new(kind: ModelKind, train: TrainConfig, regularization: RegularizationConfig) -> Self {
        Self {
            kind,
            train,
            regularization,
            state: None,
            params: None,
        }
    }

    pub fn regularization_state(&self) -> Option<&RegularizationState> {
        self.state.as_ref()
    }

    pub fn params(&self) -> Option<&[HyperParameters]> {
        self.params.as_deref()
    }

    /// Trains on `data` for `iterations` steps; `test` adds held-out RMSE to the trace.
    pub fn fit(&mut self, data: &Dataset, test: Option<&Dataset>, iterations: usize) -> Result<(FittedModel, TrainTrace)> {
        if data.is_empty() {
            return Err(Error::Empty("training data"));
        }
        let cfg = TrainConfig {
            iterations,
            ..self.train.clone()
        };
        match self.kind {
            ModelKind::Sogpr => self.fit_independent(data, test, &cfg),
            ModelKind::ConventionalMogpr | ModelKind::MogprNtm => self.fit_joint(data, test, &cfg),
        }
    }

    fn fit_joint(&mut self, data: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<(FittedModel, TrainTrace)> {
        let standardizer = Standardizer::fit(&data.y);
        let h0 = match &self.params {
            Some(p) => p[0].clone(),
            None => HyperParameters::initial(&standardizer.standardize(data), cfg.kernel, cfg.num_latent)?,
        };
        if self.kind == ModelKind::MogprNtm && self.state.is_none() {
            self.state = Some(RegularizationState::new(self.regularization.clone(), data.outputs())?);
        }
        let penalty = self.state.as_mut().map(|s| s as &mut dyn crate::gp::Penalty);
        let (model, trace) = fit_model_from(&h0, data, test, cfg, penalty, standardizer)?;
        self.params = Some(vec![model.params().clone()]);
        Ok((FittedModel::Joint(model), trace))
    }

    fn fit_independent(
        &mut self,
        data: &Dataset,
        test: Option<&Dataset>,
        cfg: &TrainConfig,
    ) -> Result<(FittedModel, TrainTrace)> {
        let single = TrainConfig {
            fixed: Some(cfg.fixed.map(|f| FixedParams { coreg: true, ..f }).unwrap_or(FixedParams::for_outputs(1))),
            ..cfg.clone()
        };
        let mut models = Vec::with_capacity(data.outputs());
        let mut traces = Vec::with_capacity(data.outputs());
        let mut params = Vec::with_capacity(data.outputs());
        for t in 0..data.outputs() {
            let d = data.output(t);
            let standardizer = Standardizer::fit(&d.y);
            let h0 = match &self.params {
                Some(p) => p[t].clone(),
                None => HyperParameters::initial(&standardizer.standardize(&d), single.kernel, single.num_latent)?,
            };
            let test_t = test.map(|x| x.output(t));
            let (m, tr) = fit_model_from(&h0, &d, test_t.as_ref(), &single, None, standardizer)?;
            params.push(m.params().clone());
            models.push(m);
            traces.push(tr);
        }
        self.params = Some(params);
        Ok((FittedModel::Independent(IndependentModels(models)), merge_traces(&traces)))
    }
}
