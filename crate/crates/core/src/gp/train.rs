//! Gradient-descent hyperparameter fitting.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::KernelKind;
use crate::error::{Error, Result};
use crate::gp::likelihood::evaluate;
use crate::gp::metrics::rmse_all;
use crate::gp::params::{pack, unpack, FixedParams, HyperParameters, ParamLayout};
use crate::gp::{Dataset, GpModel, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Step decay: the learning rate is multiplied by `decay_factor` every `decay_period` iterations.
    pub decay_factor: f64,
    pub decay_period: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub record_every: usize,
    /// Divide the negative log marginal likelihood by N·T so η and penalty weights are scale-free.
    pub normalize_loss: bool,
    pub kernel: KernelKind,
    pub num_latent: usize,
    /// Parameter families held fixed; `None` picks [`FixedParams::for_outputs`].
    pub fixed: Option<FixedParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.1,
            decay_factor: 0.5,
            decay_period: 200,
            clip_norm: 10.0,
            seed: 0,
            record_every: 2,
            normalize_loss: true,
            kernel: KernelKind::SquaredExponential,
            num_latent: 1,
            fixed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if self.decay_period == 0 || !(self.decay_factor > 0.0) {
            return Err(Error::Config("decay_period must be ≥ 1 and decay_factor > 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.num_latent == 0 {
            return Err(Error::Config("num_latent must be at least 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let steps = (iteration.saturating_sub(1) / self.decay_period) as i32;
        self.learning_rate * self.decay_factor.powi(steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub neg_mll: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    /// Test RMSE per output on the original scale, empty when no test split was given.
    pub test_rmse: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Writes `iteration,negMLL,regLoss,totalLoss,testRMSE_1..T`.
    pub fn write_csv<W: Write>(&self, out: W, outputs: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "negMLL".into(), "regLoss".into(), "totalLoss".into()];
        header.extend((1..=outputs).map(|t| format!("testRMSE_{t}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                format!("{:?}", r.neg_mll),
                format!("{:?}", r.reg_loss),
                format!("{:?}", r.total_loss),
            ];
            row.extend((0..outputs).map(|t| r.test_rmse.get(t).map(|v| format!("{v:?}")).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, outputs: usize) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, outputs)
    }
}

/// Additive training penalty evaluated on the unconstrained parameter vector.
pub trait Penalty {
    /// Penalty value and its gradient with respect to `raw` for the iteration about to run.
    fn evaluate(&mut self, h: &HyperParameters, layout: &ParamLayout, raw: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Called once the parameter step of the current iteration has been applied.
    fn after_step(&mut self);
}

/// Raw-scale held-out evaluation attached to a training run.
pub struct HeldOut<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub standardizer: &'a Standardizer,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HyperParameters,
    pub trace: TrainTrace,
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Minimizes `-log p(y) [/ NT] + penalty` by clipped gradient descent on `data` as given.
pub fn optimize(
    h0: &HyperParameters,
    data: &Dataset,
    cfg: &TrainConfig,
    mut penalty: Option<&mut dyn Penalty>,
    held_out: Option<&HeldOut<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    h0.validate()?;
    let mut trace = TrainTrace::default();
    if cfg.iterations == 0 {
        return Ok(TrainOutcome {
            params: h0.clone(),
            trace,
        });
    }
    let layout = ParamLayout::of(h0);
    let fixed = cfg.fixed.unwrap_or_else(|| FixedParams::for_outputs(h0.outputs()));
    let mask = layout.trainable_mask(&fixed);
    let mut raw = pack(h0, &layout);
    let scale = if cfg.normalize_loss {
        1.0 / (data.len() * data.outputs()).max(1) as f64
    } else {
        1.0
    };
    let mut current = h0.clone();

    for it in 1..=cfg.iterations {
        let diverged = |trace: &TrainTrace| Error::Diverged {
            iteration: it,
            trace: Box::new(trace.clone()),
        };
        let eval = match evaluate(&current, data) {
            Ok(e) => e,
            Err(Error::NonFinite(_)) | Err(Error::NotPositiveDefinite { .. }) => return Err(diverged(&trace)),
            Err(e) => return Err(e),
        };
        let neg_mll = -eval.value * scale;
        let mut grad: Vec<f64> = eval.gradient.iter().map(|g| -g * scale).collect();
        let mut reg_loss = 0.0;
        if let Some(p) = penalty.as_deref_mut() {
            let (v, g) = p.evaluate(&current, &layout, &raw)?;
            reg_loss = v;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let total = neg_mll + reg_loss;
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(&trace));
        }
        for (g, m) in grad.iter_mut().zip(&mask) {
            if !m {
                *g = 0.0;
            }
        }
        clip(&mut grad, cfg.clip_norm);
        let lr = cfg.learning_rate_at(it);
        for (r, g) in raw.iter_mut().zip(&grad) {
            *r -= lr * g;
        }
        current = unpack(h0, &layout, &raw);
        if let Some(p) = penalty.as_deref_mut() {
            p.after_step();
        }
        if it % cfg.record_every == 0 {
            let test_rmse = match held_out {
                Some(ho) => {
                    let model = GpModel::with_standardizer(&current, ho.train, ho.standardizer.clone())
                        .map_err(|_| diverged(&trace))?;
                    rmse_all(&model.predict_mean(&ho.test.x)?, &ho.test.y)?
                }
                None => Vec::new(),
            };
            trace.records.push(TraceRecord {
                iteration: it,
                neg_mll,
                reg_loss,
                total_loss: total,
                test_rmse,
            });
        }
    }
    Ok(TrainOutcome { params: current, trace })
}

/// Unregularized fit on `data` as given.
pub fn train(h0: &HyperParameters, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    optimize(h0, data, cfg, None, None)
}

/// Standardizes `train_data`, initializes, fits and returns the model with its trace.
///
/// When `test` is present the trace carries raw-scale test RMSE per output.
pub fn fit_model(
    train_data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    penalty: Option<&mut dyn Penalty>,
) -> Result<(GpModel, TrainTrace)> {
    let standardizer = Standardizer::fit(&train_data.y);
    let z = standardizer.standardize(train_data);
    let h0 = HyperParameters::initial(&z, cfg.kernel, cfg.num_latent)?;
    fit_model_from(&h0, train_data, test, cfg, penalty, standardizer)
}

/// Like [`fit_model`] but starting from `h0` under a fixed standardization (warm start).
pub fn fit_model_from(
    h0: &HyperParameters,
    train_data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    penalty: Option<&mut dyn Penalty>,
    standardizer: Standardizer,
) -> Result<(GpModel, TrainTrace)> {
    let z = standardizer.standardize(train_data);
    let held = test.map(|t| HeldOut {
        train: train_data,
        test: t,
        standardizer: &standardizer,
    });
    let out = optimize(h0, &z, cfg, penalty, held.as_ref())?;
    let model = GpModel::with_standardizer(&out.params, train_data, standardizer.clone())?;
    Ok((model, out.trace))
}

/// T independent single-output models, one per output column.
pub fn train_sogpr(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<GpModel>> {
    Ok(train_sogpr_traced(data, None, cfg)?.into_iter().map(|(m, _)| m).collect())
}

pub fn train_sogpr_traced(
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<(GpModel, TrainTrace)>> {
    if data.outputs() == 0 {
        return Err(Error::Empty("outputs"));
    }
    let mut single = cfg.clone();
    single.fixed = Some(cfg.fixed.map(|f| FixedParams { coreg: true, ..f }).unwrap_or(FixedParams::for_outputs(1)));
    (0..data.outputs())
        .map(|t| {
            let test_t = test.map(|d| d.output(t));
            fit_model(&data.output(t), test_t.as_ref(), &single, None)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sine_data(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.5);
        let y = DMatrix::from_fn(n, 2, |i, t| ((i as f64) * 0.5 * (1.0 + t as f64)).sin());
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn zero_iterations_is_identity() {
        let d = sine_data(6);
        let h0 = HyperParameters::initial(&d, KernelKind::SquaredExponential, 1).unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let out = train(&h0, &d, &cfg).unwrap();
        assert_eq!(out.params, h0);
        assert!(out.trace.records.is_empty());
    }

    #[test]
    fn descent_and_determinism() {
        let d = sine_data(10);
        let h0 = HyperParameters::initial(&d, KernelKind::Matern52, 1).unwrap();
        let cfg = TrainConfig {
            iterations: 40,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let a = train(&h0, &d, &cfg).unwrap();
        let b = train(&h0, &d, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.params, b.params);
        let first = a.trace.records.first().unwrap().neg_mll;
        let last = a.trace.records.last().unwrap().neg_mll;
        assert!(last <= first, "{last} > {first}");
    }

    #[test]
    fn record_cadence() {
        let d = sine_data(5);
        let h0 = HyperParameters::initial(&d, KernelKind::SquaredExponential, 1).unwrap();
        let cfg = TrainConfig {
            iterations: 9,
            record_every: 3,
            ..TrainConfig::default()
        };
        let out = train(&h0, &d, &cfg).unwrap();
        let its: Vec<usize> = out.trace.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![3, 6, 9]);
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig {
            learning_rate: 0.2,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(1), 0.2);
        assert_eq!(cfg.learning_rate_at(200), 0.2);
        assert_eq!(cfg.learning_rate_at(201), 0.1);
        assert_eq!(cfg.learning_rate_at(401), 0.05);
    }

    #[test]
    fn invalid_config_rejected() {
        let d = sine_data(4);
        let h0 = HyperParameters::initial(&d, KernelKind::SquaredExponential, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&h0, &d, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn trace_csv_header() {
        let trace = TrainTrace {
            records: vec![TraceRecord {
                iteration: 2,
                neg_mll: 1.5,
                reg_loss: 0.0,
                total_loss: 1.5,
                test_rmse: vec![0.1, 0.2],
            }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, 2).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iteration,negMLL,regLoss,totalLoss,testRMSE_1,testRMSE_2\n2,1.5,0.0,1.5,0.1,0.2"));
    }
}
