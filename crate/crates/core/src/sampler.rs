//! Two-stage adaptive sampling of a black-box oracle.
//!
//! Candidates are scored by `|∇μ|^g · σ^v`. Early on `v ≈ 1, g ≈ 0` so the
//! loop samples where the surrogate is uncertain; the exponents then cross
//! over along a logistic curve and the loop concentrates on steep regions of
//! the predicted mean, which is where mode boundaries sit.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::Oracle;
use crate::error::{Error, Result};
use crate::gp::{Dataset, Surrogate, TrainConfig};
use crate::model::{FittedModel, ModelKind, ModelTrainer};
use crate::ntm::{RegularizationConfig, RegularizationState};

/// Hyperrectangle plus the finite candidate set searched each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TestingSpace {
    pub bounds: Vec<(f64, f64)>,
    /// M×d, rows in lexicographic order for grids.
    pub candidates: DMatrix<f64>,
}

impl TestingSpace {
    pub fn new(bounds: Vec<(f64, f64)>, candidates: DMatrix<f64>) -> Result<Self> {
        validate_bounds(&bounds)?;
        if candidates.ncols() != bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "candidate dimension",
                expected: bounds.len(),
                got: candidates.ncols(),
            });
        }
        for i in 0..candidates.nrows() {
            for (k, (a, b)) in bounds.iter().enumerate() {
                let v = candidates[(i, k)];
                if !(v >= *a && v <= *b) {
                    return Err(Error::OutOfDomain(format!("candidate {i} coordinate {k} = {v} outside [{a}, {b}]")));
                }
            }
        }
        Ok(Self { bounds, candidates })
    }

    /// Regular grid of cell centers, `counts[k]` cells along dimension `k`.
    pub fn grid(bounds: Vec<(f64, f64)>, counts: &[usize]) -> Result<Self> {
        validate_bounds(&bounds)?;
        if counts.len() != bounds.len() || counts.contains(&0) {
            return Err(Error::invalid("grid needs one positive count per dimension"));
        }
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .zip(counts)
            .map(|((a, b), &n)| (0..n).map(|i| a + (b - a) * (i as f64 + 0.5) / n as f64).collect())
            .collect();
        let m: usize = counts.iter().product();
        let d = bounds.len();
        let mut candidates = DMatrix::zeros(m, d);
        for row in 0..m {
            let mut rem = row;
            for k in (0..d).rev() {
                candidates[(row, k)] = axes[k][rem % counts[k]];
                rem /= counts[k];
            }
        }
        Self::new(bounds, candidates)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.candidates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn candidate(&self, i: usize) -> Vec<f64> {
        self.candidates.row(i).iter().copied().collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bounds.iter().map(|(a, b)| b - a).collect()
    }

    /// Min-max normalization to the unit cube.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, (a, b))| (v - a) / (b - a)).collect()
    }
}

fn validate_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Empty("testing space bounds"));
    }
    for (a, b) in bounds {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid(format!("invalid interval [{a}, {b}]")));
        }
    }
    Ok(())
}

/// Central-difference gradient magnitude of every output of the mean.
///
/// `steps[k]` is the difference step along dimension `k`; near a bound the
/// difference becomes one-sided.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanGradient {
    pub per_output: Vec<f64>,
    /// Largest of `per_output / scale`.
    pub aggregate: f64,
}

fn stencil(points: &DMatrix<f64>, steps: &[f64], bounds: &[(f64, f64)]) -> (DMatrix<f64>, Vec<Vec<f64>>) {
    let (m, d) = points.shape();
    let mut q = DMatrix::zeros(2 * d * m, d);
    let mut spans = vec![vec![0.0; d]; m];
    for i in 0..m {
        for k in 0..d {
            let x = points[(i, k)];
            let (a, b) = bounds[k];
            let hi = (x + steps[k]).min(b);
            let lo = (x - steps[k]).max(a);
            spans[i][k] = hi - lo;
            for (r, v) in [(2 * (i * d + k), hi), (2 * (i * d + k) + 1, lo)] {
                for kk in 0..d {
                    q[(r, kk)] = points[(i, kk)];
                }
                q[(r, k)] = v;
            }
        }
    }
    (q, spans)
}

/// Gradient magnitudes at every row of `points`, in one batched mean query.
pub fn mean_gradients(
    model: &dyn Surrogate,
    points: &DMatrix<f64>,
    steps: &[f64],
    bounds: &[(f64, f64)],
) -> Result<Vec<MeanGradient>> {
    let d = points.ncols();
    if steps.len() != d || bounds.len() != d {
        return Err(Error::DimensionMismatch {
            context: "gradient steps",
            expected: d,
            got: steps.len().min(bounds.len()),
        });
    }
    if steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::invalid("difference step must be positive"));
    }
    let (q, spans) = stencil(points, steps, bounds);
    let mu = model.predict_mean(&q)?;
    let scale = model.output_scale();
    let t = mu.ncols();
    Ok((0..points.nrows())
        .map(|i| {
            let per_output: Vec<f64> = (0..t)
                .map(|o| {
                    (0..d)
                        .map(|k| {
                            let r = 2 * (i * d + k);
                            let g = (mu[(r, o)] - mu[(r + 1, o)]) / spans[i][k];
                            g * g
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let aggregate = per_output
                .iter()
                .zip(&scale)
                .map(|(g, s)| g / s)
                .fold(0.0, f64::max);
            MeanGradient { per_output, aggregate }
        })
        .collect())
}

/// Gradient magnitude of the mean at a single point.
pub fn gradient_of_mean(model: &dyn Surrogate, x: &[f64], steps: &[f64], bounds: &[(f64, f64)]) -> Result<MeanGradient> {
    let p = DMatrix::from_row_slice(1, x.len(), x);
    Ok(mean_gradients(model, &p, steps, bounds)?.remove(0))
}

/// `grad^g · σ^v` with `0⁰ = 1`.
pub fn score_candidate(grad_mag: f64, sigma: f64, g: f64, v: f64) -> f64 {
    grad_mag.powf(g) * sigma.powf(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Exploration,
    Exploitation,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Exploration => "exploration",
            Stage::Exploitation => "exploitation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Iteration at which `g = v`.
    pub switch_iteration: f64,
    /// Logistic steepness per iteration.
    pub steepness: f64,
    /// If the RMS change of the standardized mean between consecutive
    /// iterations drops below this, the steepness is multiplied by `acceleration`.
    pub accuracy_threshold: f64,
    pub acceleration: f64,
    /// Pin `(g, v)` instead of following the schedule.
    pub fixed: Option<(f64, f64)>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            switch_iteration: 80.0,
            steepness: 0.1,
            accuracy_threshold: 0.02,
            acceleration: 2.0,
            fixed: None,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.switch_iteration > 0.0) || !(self.steepness > 0.0) || !(self.acceleration >= 1.0) {
            return Err(Error::Config(
                "schedule needs switch_iteration > 0, steepness > 0 and acceleration >= 1".into(),
            ));
        }
        if !(self.accuracy_threshold > 0.0) {
            return Err(Error::Config("accuracy_threshold must be positive".into()));
        }
        if let Some((g, v)) = self.fixed {
            if !(g >= 0.0 && v >= 0.0) {
                return Err(Error::Config("fixed exponents must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Exponents `g = p`, `v = 1 − p` with `p = logistic(k · (t − switch))`.
///
/// `k` doubles on iterations where the model has stopped changing, which
/// completes the crossover sooner without moving its midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub config: ScheduleConfig,
    pub iteration: usize,
    pub g: f64,
    pub v: f64,
    pub stage: Stage,
    pub accelerated: bool,
}

impl SamplingSchedule {
    pub fn new(config: ScheduleConfig) -> Self {
        let mut s = Self {
            config,
            iteration: 0,
            g: 0.0,
            v: 1.0,
            stage: Stage::Exploration,
            accelerated: false,
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        let (g, v) = match self.config.fixed {
            Some(gv) => gv,
            None => {
                let k = self.config.steepness * if self.accelerated { self.config.acceleration } else { 1.0 };
                let p = 1.0 / (1.0 + (-k * (self.iteration as f64 - self.config.switch_iteration)).exp());
                (p, 1.0 - p)
            }
        };
        self.g = g;
        self.v = v;
        self.stage = if g > v { Stage::Exploitation } else { Stage::Exploration };
    }
}

/// Advances the schedule by one iteration given the latest accuracy change.
pub fn update_schedule(sched: &SamplingSchedule, accuracy_delta: f64) -> SamplingSchedule {
    let mut next = sched.clone();
    next.iteration += 1;
    next.accelerated = accuracy_delta < sched.config.accuracy_threshold;
    next.refresh();
    next
}

/// Remaining candidate indices, in pool order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub remaining: Vec<usize>,
}

impl CandidatePool {
    pub fn full(space: &TestingSpace) -> Self {
        Self {
            remaining: (0..space.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.remaining.len()
    }

    pub fn is_empty(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn remove(&mut self, candidate: usize) -> bool {
        match self.remaining.iter().position(|&c| c == candidate) {
            Some(p) => {
                self.remaining.remove(p);
                true
            }
            None => false,
        }
    }
}

/// Choice of [`select_next`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub candidate: usize,
    pub point: Vec<f64>,
    pub score: f64,
    pub gradient: f64,
    pub sigma: f64,
}

/// Scores for every remaining candidate, in pool order.
pub fn score_pool(
    model: &dyn Surrogate,
    space: &TestingSpace,
    pool: &CandidatePool,
    g: f64,
    v: f64,
    step_fraction: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let pts = DMatrix::from_fn(pool.len(), space.dim(), |r, k| space.candidates[(pool.remaining[r], k)]);
    let scale = model.output_scale();
    let sigma: Vec<f64> = if v != 0.0 {
        let pred = model.predict(&pts)?;
        (0..pts.nrows())
            .map(|r| {
                (0..pred.variance.ncols())
                    .map(|o| pred.variance[(r, o)].max(0.0).sqrt() / scale[o])
                    .fold(0.0, f64::max)
            })
            .collect()
    } else {
        vec![0.0; pts.nrows()]
    };
    let grads: Vec<f64> = if g != 0.0 {
        let steps: Vec<f64> = space.widths().iter().map(|w| w * step_fraction).collect();
        mean_gradients(model, &pts, &steps, &space.bounds)?.into_iter().map(|m| m.aggregate).collect()
    } else {
        vec![0.0; pts.nrows()]
    };
    Ok(grads
        .par_iter()
        .zip(sigma.par_iter())
        .map(|(gr, s)| (score_candidate(*gr, *s, g, v), *gr, *s))
        .collect())
}

/// Highest-scoring remaining candidate; ties go to the earliest in pool order.
pub fn select_next(
    model: &dyn Surrogate,
    space: &TestingSpace,
    pool: &CandidatePool,
    sched: &SamplingSchedule,
    step_fraction: f64,
) -> Result<Selection> {
    let scores = score_pool(model, space, pool, sched.g, sched.v, step_fraction)?;
    let mut best = 0;
    for (r, s) in scores.iter().enumerate() {
        if s.0 > scores[best].0 {
            best = r;
        }
    }
    let candidate = pool.remaining[best];
    Ok(Selection {
        candidate,
        point: space.candidate(candidate),
        score: scores[best].0,
        gradient: scores[best].1,
        sigma: scores[best].2,
    })
}

/// Seeded Latin-hypercube design of `n` points.
pub fn latin_hypercube(bounds: &[(f64, f64)], n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = bounds.len();
    let mut x = DMatrix::zeros(n, d);
    for (k, (a, b)) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (i, s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            x[(i, k)] = a + (b - a) * (*s as f64 + u) / n as f64;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRecord {
    /// 1-based query attempt.
    pub iteration: usize,
    pub candidate: usize,
    pub chosen: Vec<f64>,
    pub score: f64,
    pub stage: Stage,
    pub g: f64,
    pub v: f64,
    /// Identifier of the surrogate that chose the point.
    pub model_ref: String,
    /// `None` when the oracle failed at this point.
    pub observed: Option<Vec<f64>>,
}

impl SamplingRecord {
    pub fn failed(&self) -> bool {
        self.observed.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub initial_design: usize,
    pub budget: usize,
    /// Candidate cells per dimension.
    pub grid: Vec<usize>,
    /// Optimizer steps for the first fit.
    pub initial_iterations: usize,
    /// Warm-started steps per refit.
    pub retrain_iterations: usize,
    /// Difference step as a fraction of each interval width.
    pub step_fraction: f64,
    pub schedule: ScheduleConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            initial_design: 10,
            budget: 120,
            grid: vec![50, 25],
            initial_iterations: 300,
            retrain_iterations: 25,
            step_fraction: 1e-3,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_design < 2 {
            return Err(Error::Config("initial_design must be at least 2".into()));
        }
        if !(self.step_fraction > 0.0) {
            return Err(Error::Config("step_fraction must be positive".into()));
        }
        if self.grid.contains(&0) {
            return Err(Error::Config("grid counts must be positive".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SamplingRun {
    pub model: FittedModel,
    pub records: Vec<SamplingRecord>,
    /// Initial design followed by every successful query.
    pub data: Dataset,
    pub initial: usize,
    pub schedules: Vec<SamplingSchedule>,
    pub regularization: Option<RegularizationState>,
}

impl SamplingRun {
    pub fn successful(&self) -> impl Iterator<Item = &SamplingRecord> {
        self.records.iter().filter(|r| !r.failed())
    }

    /// `iteration,x1..xd,y1..yT,score,stage,g,v`; initial design rows carry iteration 0.
    pub fn write_csv<W: Write>(&self, out: W, header_lines: &[String]) -> Result<()> {
        write_samples_csv(out, &self.data, self.initial, &self.records, header_lines)
    }
}

pub fn write_samples_csv<W: Write>(
    mut out: W,
    data: &Dataset,
    initial: usize,
    records: &[SamplingRecord],
    header_lines: &[String],
) -> Result<()> {
    for l in header_lines {
        writeln!(out, "# {l}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=data.dim()).map(|k| format!("x{k}")));
    header.extend((1..=data.outputs()).map(|t| format!("y{t}")));
    header.extend(["score", "stage", "g", "v"].map(String::from));
    w.write_record(&header)?;
    for i in 0..initial {
        let mut row = vec!["0".to_string()];
        row.extend(data.row_x(i).iter().map(|v| format!("{v:?}")));
        row.extend(data.y.row(i).iter().map(|v| format!("{v:?}")));
        row.extend(["", "initial", "", ""].map(String::from));
        w.write_record(&row)?;
    }
    for r in records.iter().filter(|r| !r.failed()) {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.chosen.iter().map(|v| format!("{v:?}")));
        row.extend(r.observed.as_ref().expect("successful").iter().map(|v| format!("{v:?}")));
        row.push(format!("{:?}", r.score));
        row.push(r.stage.label().to_string());
        row.push(format!("{:?}", r.g));
        row.push(format!("{:?}", r.v));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `x*`/`y*` columns of a samples CSV back into a dataset, plus the stage column.
pub fn read_samples_csv(path: &Path) -> Result<(Dataset, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let header = rd.headers()?.clone();
    let xs: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with('x')).map(|(i, _)| i).collect();
    let ys: Vec<usize> = header.iter().enumerate().filter(|(_, h)| h.starts_with('y')).map(|(i, _)| i).collect();
    let stage = header.iter().position(|h| h == "stage");
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Format("samples file needs x* and y* columns".into()));
    }
    let mut xv = Vec::new();
    let mut yv = Vec::new();
    let mut stages = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::Format(format!("bad number {:?}: {e}", &rec[i])))
        };
        for &i in &xs {
            xv.push(parse(i)?);
        }
        for &i in &ys {
            yv.push(parse(i)?);
        }
        stages.push(stage.map(|s| rec[s].to_string()).unwrap_or_default());
    }
    let n = stages.len();
    let x = DMatrix::from_row_slice(n, xs.len(), &xv);
    let y = DMatrix::from_row_slice(n, ys.len(), &yv);
    Ok((Dataset::new(x, y)?, stages))
}

fn rms_change(a: &DMatrix<f64>, b: &DMatrix<f64>, scale: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    let s: f64 = (0..a.nrows())
        .flat_map(|i| (0..a.ncols()).map(move |o| (i, o)))
        .map(|(i, o)| ((a[(i, o)] - b[(i, o)]) / scale[o]).powi(2))
        .sum();
    (s / n).sqrt()
}

/// Surrogate-guided sampling loop with exactly `budget` successful oracle queries.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive_sampling(
    oracle: &dyn Oracle,
    space: &TestingSpace,
    cfg: &SamplerConfig,
    kind: ModelKind,
    train: &TrainConfig,
    regularization: &RegularizationConfig,
    seed: u64,
) -> Result<SamplingRun> {
    cfg.validate()?;
    if oracle.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            context: "oracle dimension",
            expected: space.dim(),
            got: oracle.dim(),
        });
    }
    let design = latin_hypercube(&space.bounds, cfg.initial_design, seed);
    let mut data = Dataset::empty(space.dim(), oracle.outputs());
    for i in 0..design.nrows() {
        let x: Vec<f64> = design.row(i).iter().copied().collect();
        if let Ok(y) = oracle.evaluate(&x) {
            data.push(&x, &y)?;
        }
    }
    if data.len() < 2 {
        return Err(Error::Oracle("fewer than two initial design points could be evaluated".into()));
    }
    let initial = data.len();
    let mut trainer = ModelTrainer::new(kind, TrainConfig { seed, ..train.clone() }, regularization.clone());
    let (mut model, _) = trainer.fit(&data, None, cfg.initial_iterations)?;
    let mut pool = CandidatePool::full(space);
    let mut sched = SamplingSchedule::new(cfg.schedule.clone());
    let mut schedules = vec![sched.clone()];
    let mut records = Vec::new();
    let mut previous_mean = model.predict_mean(&space.candidates)?;
    let mut fits = 0usize;
    let mut attempt = 0usize;
    let mut successes = 0usize;
    while successes < cfg.budget {
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        attempt += 1;
        let sel = select_next(&model, space, &pool, &sched, cfg.step_fraction)?;
        pool.remove(sel.candidate);
        let observed = oracle.evaluate(&sel.point).ok();
        records.push(SamplingRecord {
            iteration: attempt,
            candidate: sel.candidate,
            chosen: sel.point.clone(),
            score: sel.score,
            stage: sched.stage,
            g: sched.g,
            v: sched.v,
            model_ref: format!("{}-fit{fits}", kind.label()),
            observed: observed.clone(),
        });
        let Some(y) = observed else {
            continue;
        };
        successes += 1;
        data.push(&sel.point, &y)?;
        let (m, _) = trainer.fit(&data, None, cfg.retrain_iterations)?;
        model = m;
        fits += 1;
        let mean = model.predict_mean(&space.candidates)?;
        let delta = rms_change(&mean, &previous_mean, &model.output_scale());
        previous_mean = mean;
        sched = update_schedule(&sched, delta);
        schedules.push(sched.clone());
    }
    Ok(SamplingRun {
        model,
        records,
        data,
        initial,
        schedules,
        regularization: trainer.regularization_state().cloned(),
    })
}

/// Uniform draws without replacement from the same candidate pool.
pub fn run_random_sampling(oracle: &dyn Oracle, space: &TestingSpace, cfg: &SamplerConfig, seed: u64) -> Result<SamplingRun> {
    cfg.validate()?;
    let design = latin_hypercube(&space.bounds, cfg.initial_design, seed);
    let mut data = Dataset::empty(space.dim(), oracle.outputs());
    for i in 0..design.nrows() {
        let x: Vec<f64> = design.row(i).iter().copied().collect();
        if let Ok(y) = oracle.evaluate(&x) {
            data.push(&x, &y)?;
        }
    }
    let initial = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_7a4d);
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.shuffle(&mut rng);
    let mut records = Vec::new();
    let mut successes = 0;
    for (attempt, c) in order.into_iter().enumerate() {
        if successes == cfg.budget {
            break;
        }
        let x = space.candidate(c);
        let observed = oracle.evaluate(&x).ok();
        if let Some(y) = &observed {
            data.push(&x, y)?;
            successes += 1;
        }
        records.push(SamplingRecord {
            iteration: attempt + 1,
            candidate: c,
            chosen: x,
            score: 0.0,
            stage: Stage::Exploration,
            g: 0.0,
            v: 0.0,
            model_ref: "random".into(),
            observed,
        });
    }
    if successes < cfg.budget {
        return Err(Error::EmptyPool);
    }
    let mut trainer = ModelTrainer::new(ModelKind::ConventionalMogpr, TrainConfig::default(), RegularizationConfig::default());
    let (model, _) = trainer.fit(&data, None, 0)?;
    Ok(SamplingRun {
        model,
        records,
        data,
        initial,
        schedules: Vec::new(),
        regularization: None,
    })
}
