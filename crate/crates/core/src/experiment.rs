//! Config-driven experiments and their artifacts.
//!
//! Every experiment fans out into independent cells (one data source, model
//! and seed each). Cells run in parallel and write their own files under
//! `cells/`; a sequential finalizer then merges them in config order, so the
//! merged artifacts do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{analyze, Analysis, AnalysisConfig, AnalysisSummary};
use crate::benchmarks::{gen_motivation_pair, gen_suite_dataset, NoiseSpec, OracleSurface, SuiteId};
use crate::error::{Error, Result};
use crate::gp::{rmse_all, split_dataset, Dataset, Surrogate, TrainConfig};
use crate::math::{mean, median};
use crate::model::{ModelKind, ModelTrainer};
use crate::ntm::RegularizationConfig;
use crate::sampler::{run_adaptive_sampling, run_random_sampling, SamplerConfig, SamplingRun, Stage, TestingSpace};
use crate::verify::run_verify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FunctionBenchmark,
    MotivationDemo,
    BoundarySampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Bench,
    Motivate,
    Sample,
    Analyze,
    Report,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bench => "bench",
            Command::Motivate => "motivate",
            Command::Sample => "sample",
            Command::Analyze => "analyze",
            Command::Report => "report",
            Command::Verify => "verify",
        }
    }

    fn accepts(self, kind: ExperimentKind) -> bool {
        use ExperimentKind::*;
        match self {
            Command::Bench => kind == FunctionBenchmark,
            Command::Motivate => kind == MotivationDemo,
            Command::Sample | Command::Analyze => kind == BoundarySampling,
            Command::Report => kind != BoundarySampling,
            Command::Verify => true,
        }
    }
}

/// How seeds map onto runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    /// Every model on every seed.
    #[default]
    PerSeed,
    /// One run per model; model `k` uses `seeds[k % seeds.len()]`.
    PerModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When set, must match the subcommand.
    pub kind: Option<ExperimentKind>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub seed_mode: SeedMode,
    pub suites: Vec<SuiteId>,
    /// Points generated per suite before the split.
    pub n: usize,
    /// Training fraction.
    pub split: f64,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub regularization: RegularizationConfig,
    pub sampler: SamplerConfig,
    /// Also run uniform random sampling per seed.
    pub random_baseline: bool,
    /// Distance to the true boundary, in input units, that counts as "near".
    pub boundary_delta: f64,
    pub analysis: AnalysisConfig,
    pub oracle: OracleSurface,
    /// Samples file read by `analyze`; defaults to `<out_dir>/samples.csv`.
    pub samples: Option<PathBuf>,
    /// Not part of the config hash.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            models: ModelKind::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            seed_mode: SeedMode::PerSeed,
            suites: (1..=3).map(SuiteId::SingleInput).collect(),
            n: 60,
            split: 0.8,
            noise: NoiseSpec::default(),
            train: TrainConfig::default(),
            regularization: RegularizationConfig::default(),
            sampler: SamplerConfig::default(),
            random_baseline: true,
            boundary_delta: 1.0,
            analysis: AnalysisConfig::default(),
            oracle: OracleSurface::default(),
            samples: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate_for(&self, command: Command) -> Result<()> {
        if let Some(kind) = self.kind {
            if !command.accepts(kind) {
                return Err(Error::Config(format!(
                    "config kind {kind:?} does not match subcommand {}",
                    command.name()
                )));
            }
        }
        if command == Command::Verify {
            return Ok(());
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("models must not be empty".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!("split must be in (0, 1), got {}", self.split)));
        }
        if command == Command::Bench && self.suites.is_empty() {
            return Err(Error::Config("suites must not be empty".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if !(self.boundary_delta > 0.0) {
            return Err(Error::Config("boundary_delta must be positive".into()));
        }
        self.train.validate()?;
        self.regularization.validate()?;
        self.sampler.validate()?;
        self.analysis.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical (sorted-key) JSON form, without `out_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// `(model, seed)` pairs in output order.
    pub fn runs(&self) -> Vec<(ModelKind, u64)> {
        match self.seed_mode {
            SeedMode::PerSeed => self
                .seeds
                .iter()
                .flat_map(|&s| self.models.iter().map(move |&m| (m, s)))
                .collect(),
            SeedMode::PerModel => self
                .models
                .iter()
                .enumerate()
                .map(|(k, &m)| (m, self.seeds[k % self.seeds.len()]))
                .collect(),
        }
    }
}

/// `100 · (a − b) / a`
pub fn percentage_decrease(rmse_a: f64, rmse_b: f64) -> Result<f64> {
    if !(rmse_a > 0.0) {
        return Err(Error::invalid(format!("reference RMSE must be positive, got {rmse_a}")));
    }
    Ok(100.0 * (rmse_a - rmse_b) / rmse_a)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub command: String,
    pub seed_mode: SeedMode,
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<String>,
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One row of the train/test RMSE table: means over runs per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub suite: String,
    pub row: String,
    /// `(model, mean train RMSE, mean test RMSE)` in config order.
    pub values: Vec<(ModelKind, f64, f64)>,
}

impl TableRow {
    pub fn test(&self, model: ModelKind) -> Option<f64> {
        self.values.iter().find(|v| v.0 == model).map(|v| v.2)
    }

    pub fn train(&self, model: ModelKind) -> Option<f64> {
        self.values.iter().find(|v| v.0 == model).map(|v| v.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PctRow {
    pub suite: String,
    pub row: String,
    pub pct_decrease: f64,
}

/// Result of one regression cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub suite: String,
    pub model: ModelKind,
    pub seed: u64,
    pub rows: Vec<String>,
    pub train_rmse: Vec<f64>,
    pub test_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTables {
    pub rows: Vec<TableRow>,
    pub pct: Vec<PctRow>,
    /// Mean percentage decrease per suite family.
    pub averages: BTreeMap<String, f64>,
    pub runs: Vec<RegressionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSummary {
    pub model: String,
    pub seed: u64,
    pub samples: usize,
    pub failed_queries: usize,
    /// Samples in the fraction's denominator: exploitation-stage queries,
    /// or every query for the random baseline.
    pub considered: usize,
    pub near_boundary: usize,
    pub boundary_fraction: Option<f64>,
    /// Every pair joins different modes and lies within one endpoint's K-NN radius.
    pub pairs_valid: bool,
    pub analysis: AnalysisSummary,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    /// Human-readable result lines for the console.
    pub lines: Vec<String>,
    pub bench: Option<BenchTables>,
    pub sampling: Option<Vec<SamplingSummary>>,
}

fn family_of(suite: &str) -> &'static str {
    if suite.starts_with("single-") {
        "single-input"
    } else if suite.starts_with("multi-") {
        "multi-input"
    } else {
        "motivation"
    }
}

/// Output directory with the merged artifact list and shared header line.
struct Writer {
    out: PathBuf,
    hash: String,
    artifacts: Vec<String>,
}

impl Writer {
    fn new(out: &Path, hash: String) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            hash,
            artifacts: Vec::new(),
        })
    }

    fn header(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash)]
    }

    fn header_text(&self) -> String {
        format!("# config_hash={}\n", self.hash)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.out.join(name), bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes a CSV with the hash line; `records` are already-formatted fields.
    fn csv(&mut self, name: &str, header: &[String], records: &[Vec<String>]) -> Result<()> {
        let mut buf = self.header_text().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in records {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }

    /// Concatenates per-cell CSVs (skipping missing ones), prefixing each row.
    fn merge(&mut self, name: &str, prefix_names: &[&str], cells: &[(Vec<String>, PathBuf)]) -> Result<bool> {
        let mut header: Option<Vec<String>> = None;
        let mut records = Vec::new();
        for (prefix, rel) in cells {
            let path = self.out.join(rel);
            if !path.exists() {
                continue;
            }
            let (h, rows) = read_csv(&path)?;
            if header.is_none() {
                let mut full: Vec<String> = prefix_names.iter().map(|s| s.to_string()).collect();
                full.extend(h);
                header = Some(full);
            }
            for r in rows {
                let mut full = prefix.clone();
                full.extend(r);
                records.push(full);
            }
        }
        match header {
            Some(h) => {
                self.csv(name, &h, &records)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn manifest(mut self, command: Command, seed_mode: SeedMode, failures: Vec<String>, summary: serde_json::Value) -> Result<Manifest> {
        self.artifacts.sort();
        self.artifacts.dedup();
        let artifacts = self
            .artifacts
            .iter()
            .map(|p| {
                let bytes = std::fs::read(self.out.join(p))?;
                Ok(Artifact {
                    path: p.clone(),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            config_hash: self.hash.clone(),
            command: command.name().to_string(),
            seed_mode,
            artifacts,
            failures,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::write(self.out.join("manifest.json"), text)?;
        Ok(m)
    }
}

/// Header and rows of a CSV, ignoring `#` comment lines.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let header = rd.headers()?.iter().map(String::from).collect();
    let rows = rd
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn to_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
}

fn failures_error(failures: &[String], total: usize) -> Result<()> {
    match failures.first() {
        Some(first) => Err(Error::CellsFailed {
            failed: failures.len(),
            total,
            first: first.clone(),
        }),
        None => Ok(()),
    }
}

/// Runs `command`, writing artifacts to `cfg.out_dir`.
pub fn run_experiment(command: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate_for(command)?;
    match command {
        Command::Bench => run_regression(command, cfg, cfg.suites.iter().map(|s| Source::Suite(*s)).collect()),
        Command::Motivate => run_regression(command, cfg, vec![Source::Motivation]),
        Command::Sample => run_sampling(cfg),
        Command::Analyze => run_analyze(cfg),
        Command::Report => run_report(cfg),
        Command::Verify => run_verify_command(cfg),
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Suite(SuiteId),
    Motivation,
}

impl Source {
    fn label(self) -> String {
        match self {
            Source::Suite(s) => s.label(),
            Source::Motivation => "motivation".into(),
        }
    }

    fn rows(self) -> Vec<String> {
        match self {
            Source::Suite(s) => (1..=3).map(|t| format!("G{}O{t}", s.group())).collect(),
            Source::Motivation => vec!["y1".into(), "y2".into()],
        }
    }

    fn data(self, cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
        match self {
            Source::Suite(s) => gen_suite_dataset(s, cfg.n, seed, cfg.noise),
            Source::Motivation => Ok(gen_motivation_pair(seed)),
        }
    }
}

fn cell_dir(command: Command, source: &str, model: &str, seed: u64) -> PathBuf {
    PathBuf::from("cells")
        .join(command.name())
        .join(source)
        .join(model)
        .join(format!("seed-{seed}"))
}

fn regression_cell(
    cfg: &ExperimentConfig,
    out: &Path,
    hash: &str,
    dir: &Path,
    source: Source,
    model: ModelKind,
    seed: u64,
) -> Result<RegressionResult> {
    let data = source.data(cfg, seed)?;
    let (train, test) = split_dataset(&data, cfg.split, seed)?;
    let mut trainer = ModelTrainer::new(model, TrainConfig { seed, ..cfg.train.clone() }, cfg.regularization.clone());
    let (fitted, trace) = trainer.fit(&train, Some(&test), cfg.train.iterations)?;
    let train_rmse = rmse_all(&fitted.predict_mean(&train.x)?, &train.y)?;
    let test_rmse = rmse_all(&fitted.predict_mean(&test.x)?, &test.y)?;
    let abs = out.join(dir);
    std::fs::create_dir_all(&abs)?;
    let header = format!("# config_hash={hash}\n");
    let mut buf = header.clone().into_bytes();
    trace.write_csv(&mut buf, data.outputs())?;
    std::fs::write(abs.join("loss_trace.csv"), buf)?;
    if let Some(state) = trainer.regularization_state() {
        let mut buf = header.into_bytes();
        state.write_history_csv(&mut buf)?;
        std::fs::write(abs.join("weights_trace.csv"), buf)?;
    }
    let result = RegressionResult {
        suite: source.label(),
        model,
        seed,
        rows: source.rows(),
        train_rmse,
        test_rmse,
    };
    std::fs::write(abs.join("result.json"), serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}

/// Means over runs per `(suite, output, model)` in config order.
pub fn build_tables(results: &[RegressionResult], suites: &[String], models: &[ModelKind]) -> Result<BenchTables> {
    let mut rows = Vec::new();
    for suite in suites {
        let Some(first) = results.iter().find(|r| &r.suite == suite) else {
            continue;
        };
        for (t, label) in first.rows.iter().enumerate() {
            let values = models
                .iter()
                .map(|&m| {
                    let mine: Vec<&RegressionResult> =
                        results.iter().filter(|r| &r.suite == suite && r.model == m).collect();
                    let tr: Vec<f64> = mine.iter().map(|r| r.train_rmse[t]).collect();
                    let te: Vec<f64> = mine.iter().map(|r| r.test_rmse[t]).collect();
                    let avg = |v: &[f64]| if v.is_empty() { f64::NAN } else { mean(v) };
                    (m, avg(&tr), avg(&te))
                })
                .collect();
            rows.push(TableRow {
                suite: suite.clone(),
                row: label.clone(),
                values,
            });
        }
    }
    let (pct, averages) = pct_from_rows(&rows)?;
    Ok(BenchTables {
        rows,
        pct,
        averages,
        runs: results.to_vec(),
    })
}

/// Conventional vs NTM test RMSE decrease per row, plus the mean per suite family.
pub fn pct_from_rows(rows: &[TableRow]) -> Result<(Vec<PctRow>, BTreeMap<String, f64>)> {
    let mut pct = Vec::new();
    let mut by_family: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let (Some(a), Some(b)) = (r.test(ModelKind::ConventionalMogpr), r.test(ModelKind::MogprNtm)) else {
            continue;
        };
        let p = percentage_decrease(a, b)?;
        by_family.entry(family_of(&r.suite).to_string()).or_default().push(p);
        pct.push(PctRow {
            suite: r.suite.clone(),
            row: r.row.clone(),
            pct_decrease: p,
        });
    }
    Ok((pct, by_family.into_iter().map(|(k, v)| (k, mean(&v))).collect()))
}

fn rmse_table_records(rows: &[TableRow], models: &[ModelKind]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["suite".to_string(), "row".to_string()];
    for m in models {
        header.push(format!("{}_train", m.label()));
        header.push(format!("{}_test", m.label()));
    }
    let records = rows
        .iter()
        .map(|r| {
            let mut rec = vec![r.suite.clone(), r.row.clone()];
            for v in &r.values {
                rec.push(fmt(v.1));
                rec.push(fmt(v.2));
            }
            rec
        })
        .collect();
    (header, records)
}

fn pct_records(pct: &[PctRow], averages: &BTreeMap<String, f64>) -> Vec<Vec<String>> {
    let mut records: Vec<Vec<String>> = pct
        .iter()
        .map(|p| vec![p.suite.clone(), p.row.clone(), fmt(p.pct_decrease)])
        .collect();
    for (family, avg) in averages {
        records.push(vec![family.clone(), "average".into(), fmt(*avg)]);
    }
    records
}

fn run_regression(command: Command, cfg: &ExperimentConfig, sources: Vec<Source>) -> Result<Outcome> {
    let hash = cfg.hash();
    let mut w = Writer::new(&cfg.out_dir, hash.clone())?;
    let cells: Vec<(Source, ModelKind, u64, PathBuf)> = sources
        .iter()
        .flat_map(|&s| {
            cfg.runs()
                .into_iter()
                .map(move |(m, seed)| (s, m, seed, cell_dir(command, &s.label(), m.label(), seed)))
        })
        .collect();
    let results: Vec<Result<RegressionResult>> = cells
        .par_iter()
        .map(|(s, m, seed, dir)| regression_cell(cfg, &cfg.out_dir, &hash, dir, *s, *m, *seed))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for ((s, m, seed, _), r) in cells.iter().zip(results) {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => failures.push(format!("{}/{}/seed-{seed}: {e}", s.label(), m.label())),
        }
    }
    let suites: Vec<String> = sources.iter().map(|s| s.label()).collect();
    let tables = build_tables(&ok, &suites, &cfg.models)?;

    let (header, records) = rmse_table_records(&tables.rows, &cfg.models);
    w.csv("rmse_table.csv", &header, &records)?;
    let runs_header: Vec<String> = ["suite", "row", "model", "seed", "train_rmse", "test_rmse"].map(String::from).to_vec();
    let runs: Vec<Vec<String>> = ok
        .iter()
        .flat_map(|r| {
            r.rows.iter().enumerate().map(move |(t, row)| {
                vec![
                    r.suite.clone(),
                    row.clone(),
                    r.model.label().to_string(),
                    r.seed.to_string(),
                    fmt(r.train_rmse[t]),
                    fmt(r.test_rmse[t]),
                ]
            })
        })
        .collect();
    w.csv("rmse_runs.csv", &runs_header, &runs)?;
    if !tables.pct.is_empty() {
        w.csv(
            "pct_decrease.csv",
            &["suite", "row", "pct_decrease"].map(String::from),
            &pct_records(&tables.pct, &tables.averages),
        )?;
    }
    let merged: Vec<(Vec<String>, PathBuf)> = cells
        .iter()
        .map(|(s, m, seed, dir)| (vec![s.label(), m.label().to_string(), seed.to_string()], dir.clone()))
        .collect();
    let with = |file: &str| -> Vec<(Vec<String>, PathBuf)> {
        merged.iter().map(|(p, d)| (p.clone(), d.join(file))).collect()
    };
    w.merge("loss_trace.csv", &["suite", "model", "seed"], &with("loss_trace.csv"))?;
    w.merge("weights_trace.csv", &["suite", "model", "seed"], &with("weights_trace.csv"))?;

    let mut lines = Vec::new();
    for r in &tables.rows {
        let mut l = format!("{} {}:", r.suite, r.row);
        for v in &r.values {
            let _ = write!(l, " {} test {:.4}", v.0, v.2);
        }
        lines.push(l);
    }
    for (f, a) in &tables.averages {
        lines.push(format!("average decrease ({f}): {a:.4}%"));
    }
    let mut summary = serde_json::json!({
        "average_decrease": tables.averages,
        "cells": cells.len(),
    });
    if command == Command::Motivate {
        let verdict = motivation_verdict(&ok);
        if let Some(v) = &verdict {
            lines.push(v.line.clone());
        }
        summary["verdict"] = serde_json::to_value(&verdict)?;
    }
    let manifest = w.manifest(command, cfg.seed_mode, failures.clone(), summary)?;
    failures_error(&failures, cells.len())?;
    Ok(Outcome {
        manifest,
        lines,
        bench: Some(tables),
        sampling: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotivationVerdict {
    /// Seeds where the joint model's y₁ test RMSE exceeds the independent model's.
    pub negative_transfer_seeds: usize,
    pub seeds: usize,
    pub line: String,
}

/// Compares conventional and independent y₁ test RMSE seed by seed.
pub fn motivation_verdict(results: &[RegressionResult]) -> Option<MotivationVerdict> {
    let find = |m: ModelKind, seed: u64| results.iter().find(|r| r.model == m && r.seed == seed);
    let mut seeds: Vec<u64> = results.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let paired: Vec<(f64, f64)> = seeds
        .iter()
        .filter_map(|&s| Some((find(ModelKind::ConventionalMogpr, s)?.test_rmse[0], find(ModelKind::Sogpr, s)?.test_rmse[0])))
        .collect();
    if paired.is_empty() {
        return None;
    }
    let k = paired.iter().filter(|(joint, single)| joint > single).count();
    let verdict = if 2 * k > paired.len() {
        "joint modeling hurts y1"
    } else {
        "no negative transfer on y1"
    };
    Some(MotivationVerdict {
        negative_transfer_seeds: k,
        seeds: paired.len(),
        line: format!(
            "verdict: {verdict} (conventional-mogpr y1 test RMSE above sogpr in {k}/{} seeds)",
            paired.len()
        ),
    })
}

fn stage_labels(run: &SamplingRun) -> Vec<String> {
    let mut s = vec!["initial".to_string(); run.initial];
    s.extend(run.successful().map(|r| r.stage.label().to_string()));
    s
}

/// Analysis of one sampling run plus the near-boundary fraction.
pub fn summarize_samples(
    cfg: &ExperimentConfig,
    label: &str,
    seed: u64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    stages: &[String],
) -> Result<(Analysis, SamplingSummary)> {
    let a = analyze(x, y, &cfg.oracle.bounds, &cfg.analysis)?;
    let considered: Vec<usize> = (0..x.nrows())
        .filter(|&i| {
            if label == "random" {
                stages[i] != "initial"
            } else {
                stages[i] == Stage::Exploitation.label()
            }
        })
        .collect();
    let near = considered
        .iter()
        .filter(|&&i| cfg.oracle.boundary_distance(&[x[(i, 0)], x[(i, 1)]]) <= cfg.boundary_delta)
        .count();
    let pairs_valid = a.pairs.iter().all(|p| {
        let radius = a.knn_radius[p.i].unwrap_or(0.0).max(a.knn_radius[p.j].unwrap_or(0.0));
        p.modes.0 != p.modes.1 && a.modes.labels[p.i] != a.modes.labels[p.j] && p.distance <= radius
    });
    let summary = SamplingSummary {
        model: label.to_string(),
        seed,
        samples: x.nrows(),
        failed_queries: 0,
        considered: considered.len(),
        near_boundary: near,
        boundary_fraction: (!considered.is_empty()).then(|| near as f64 / considered.len() as f64),
        pairs_valid,
        analysis: a.summary(),
    };
    Ok((a, summary))
}

fn write_analysis_cell(w: &Writer, dir: &Path, a: &Analysis, s: &SamplingSummary) -> Result<()> {
    let abs = w.out.join(dir);
    std::fs::create_dir_all(&abs)?;
    let mut buf = Vec::new();
    a.write_modes_csv(&mut buf, &w.header())?;
    std::fs::write(abs.join("modes.csv"), buf)?;
    let mut buf = Vec::new();
    a.write_pairs_csv(&mut buf, &w.header())?;
    std::fs::write(abs.join("boundary_pairs.csv"), buf)?;
    std::fs::write(abs.join("summary.json"), serde_json::to_string_pretty(s)?)?;
    Ok(())
}

fn sampling_lines(summaries: &[SamplingSummary]) -> (Vec<String>, serde_json::Value) {
    let mut labels: Vec<&str> = Vec::new();
    for s in summaries {
        if !labels.contains(&s.model.as_str()) {
            labels.push(&s.model);
        }
    }
    let mut lines = Vec::new();
    let mut medians = serde_json::Map::new();
    for l in labels {
        let fr: Vec<f64> = summaries
            .iter()
            .filter(|s| s.model == l)
            .filter_map(|s| s.boundary_fraction)
            .collect();
        let m = median(&fr);
        let pairs: Vec<f64> = summaries
            .iter()
            .filter(|s| s.model == l)
            .map(|s| s.analysis.boundary_pairs as f64)
            .collect();
        lines.push(format!(
            "{l}: median near-boundary fraction {} over {} runs, mean boundary pairs {:.1}",
            m.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
            fr.len(),
            mean(&pairs)
        ));
        medians.insert(l.to_string(), serde_json::json!(m));
    }
    (lines, serde_json::json!({ "median_boundary_fraction": medians }))
}

#[derive(Debug, Clone)]
struct SamplingCell {
    label: String,
    model: Option<ModelKind>,
    seed: u64,
    dir: PathBuf,
}

fn run_sampling(cfg: &ExperimentConfig) -> Result<Outcome> {
    let hash = cfg.hash();
    let mut w = Writer::new(&cfg.out_dir, hash.clone())?;
    let space = TestingSpace::grid(cfg.oracle.bounds.to_vec(), &cfg.sampler.grid)?;
    let mut cells: Vec<SamplingCell> = cfg
        .runs()
        .into_iter()
        .map(|(m, seed)| SamplingCell {
            label: m.label().into(),
            model: Some(m),
            seed,
            dir: cell_dir(Command::Sample, "oracle", m.label(), seed),
        })
        .collect();
    if cfg.random_baseline {
        for &seed in &cfg.seeds {
            cells.push(SamplingCell {
                label: "random".into(),
                model: None,
                seed,
                dir: cell_dir(Command::Sample, "oracle", "random", seed),
            });
        }
    }
    let results: Vec<Result<SamplingSummary>> = cells
        .par_iter()
        .map(|c| -> Result<SamplingSummary> {
            let run = match c.model {
                Some(m) => run_adaptive_sampling(&cfg.oracle, &space, &cfg.sampler, m, &cfg.train, &cfg.regularization, c.seed)?,
                None => run_random_sampling(&cfg.oracle, &space, &cfg.sampler, c.seed)?,
            };
            let abs = w.out.join(&c.dir);
            std::fs::create_dir_all(&abs)?;
            let mut buf = Vec::new();
            run.write_csv(&mut buf, &w.header())?;
            std::fs::write(abs.join("samples.csv"), buf)?;
            if let Some(state) = &run.regularization {
                let mut buf = w.header_text().into_bytes();
                state.write_history_csv(&mut buf)?;
                std::fs::write(abs.join("weights_trace.csv"), buf)?;
            }
            let (a, mut s) = summarize_samples(cfg, &c.label, c.seed, &run.data.x, &run.data.y, &stage_labels(&run))?;
            s.failed_queries = run.records.iter().filter(|r| r.failed()).count();
            write_analysis_cell(&w, &c.dir, &a, &s)?;
            Ok(s)
        })
        .collect();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (c, r) in cells.iter().zip(results) {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push(format!("{}/seed-{}: {e}", c.label, c.seed)),
        }
    }
    let prefixed = |file: &str| -> Vec<(Vec<String>, PathBuf)> {
        cells
            .iter()
            .map(|c| (vec![c.label.clone(), c.seed.to_string()], c.dir.join(file)))
            .collect()
    };
    w.merge("samples.csv", &["model", "seed"], &prefixed("samples.csv"))?;
    w.merge("weights_trace.csv", &["model", "seed"], &prefixed("weights_trace.csv"))?;
    w.merge("modes.csv", &["model", "seed"], &prefixed("modes.csv"))?;
    w.merge("boundary_pairs.csv", &["model", "seed"], &prefixed("boundary_pairs.csv"))?;
    let mut text = serde_json::to_string_pretty(&summaries)?;
    text.push('\n');
    w.write("analysis_summary.json", text.as_bytes())?;
    let (lines, summary) = sampling_lines(&summaries);
    let manifest = w.manifest(Command::Sample, cfg.seed_mode, failures.clone(), summary)?;
    failures_error(&failures, cells.len())?;
    Ok(Outcome {
        manifest,
        lines,
        bench: None,
        sampling: Some(summaries),
    })
}

/// One `(model, seed)` slice of a samples file: inputs, outputs and stages.
type SampleGroup = (String, u64, DMatrix<f64>, DMatrix<f64>, Vec<String>);

/// Groups a merged samples file by its `(model, seed)` prefix.
fn read_sample_groups(path: &Path) -> Result<Vec<SampleGroup>> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(mc), Some(sc), Some(stc)) = (col("model"), col("seed"), col("stage")) else {
        return Err(Error::Format(format!("{} needs model, seed and stage columns", path.display())));
    };
    let xs: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('x')).collect();
    let ys: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('y')).collect();
    if xs.len() != 2 || ys.is_empty() {
        return Err(Error::Format("samples need x1, x2 and at least one y column".into()));
    }
    #[allow(clippy::type_complexity)]
    let mut groups: Vec<(String, u64, Vec<f64>, Vec<f64>, Vec<String>)> = Vec::new();
    for r in rows {
        let seed: u64 = r[sc].parse().map_err(|e| Error::Format(format!("bad seed {:?}: {e}", r[sc])))?;
        let pos = match groups.iter().position(|g| g.0 == r[mc] && g.1 == seed) {
            Some(p) => p,
            None => {
                groups.push((r[mc].clone(), seed, Vec::new(), Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        let g = &mut groups[pos];
        for &i in &xs {
            g.2.push(to_f64(&r[i])?);
        }
        for &i in &ys {
            g.3.push(to_f64(&r[i])?);
        }
        g.4.push(r[stc].clone());
    }
    Ok(groups
        .into_iter()
        .map(|(m, s, x, y, st)| {
            let n = st.len();
            (m, s, DMatrix::from_row_slice(n, xs.len(), &x), DMatrix::from_row_slice(n, ys.len(), &y), st)
        })
        .collect())
}

fn run_analyze(cfg: &ExperimentConfig) -> Result<Outcome> {
    let input = cfg.samples.clone().unwrap_or_else(|| cfg.out_dir.join("samples.csv"));
    if !input.exists() {
        return Err(Error::Config(format!("samples file {} does not exist", input.display())));
    }
    let groups = read_sample_groups(&input)?;
    let mut w = Writer::new(&cfg.out_dir, cfg.hash())?;
    let results: Vec<Result<(Analysis, SamplingSummary)>> = groups
        .par_iter()
        .map(|(m, s, x, y, st)| summarize_samples(cfg, m, *s, x, y, st))
        .collect();
    let mut cells = Vec::new();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for ((m, s, ..), r) in groups.iter().zip(results) {
        match r {
            Ok((a, sum)) => {
                let dir = cell_dir(Command::Analyze, "samples", m, *s);
                write_analysis_cell(&w, &dir, &a, &sum)?;
                cells.push((vec![m.clone(), s.to_string()], dir));
                summaries.push(sum);
            }
            Err(e) => failures.push(format!("{m}/seed-{s}: {e}")),
        }
    }
    let with = |file: &str| -> Vec<(Vec<String>, PathBuf)> { cells.iter().map(|(p, d)| (p.clone(), d.join(file))).collect() };
    w.merge("modes.csv", &["model", "seed"], &with("modes.csv"))?;
    w.merge("boundary_pairs.csv", &["model", "seed"], &with("boundary_pairs.csv"))?;
    let mut text = serde_json::to_string_pretty(&summaries)?;
    text.push('\n');
    w.write("analysis_summary.json", text.as_bytes())?;
    let (lines, summary) = sampling_lines(&summaries);
    let manifest = w.manifest(Command::Analyze, cfg.seed_mode, failures.clone(), summary)?;
    failures_error(&failures, groups.len())?;
    Ok(Outcome {
        manifest,
        lines,
        bench: None,
        sampling: Some(summaries),
    })
}

/// Parses a `rmse_table.csv` back into rows.
pub fn read_rmse_table(path: &Path) -> Result<Vec<TableRow>> {
    let (header, rows) = read_csv(path)?;
    if header.len() < 4 || header[0] != "suite" || header[1] != "row" || header.len() % 2 != 0 {
        return Err(Error::Format(format!("{} is not an RMSE table", path.display())));
    }
    let mut models = Vec::new();
    for pair in header[2..].chunks(2) {
        let name = pair[0]
            .strip_suffix("_train")
            .ok_or_else(|| Error::Format(format!("unexpected column {:?}", pair[0])))?;
        let kind = ModelKind::ALL
            .into_iter()
            .find(|m| m.label() == name)
            .ok_or_else(|| Error::Format(format!("unknown model column {name:?}")))?;
        models.push(kind);
    }
    rows.iter()
        .map(|r| {
            let values = models
                .iter()
                .enumerate()
                .map(|(k, &m)| Ok((m, to_f64(&r[2 + 2 * k])?, to_f64(&r[3 + 2 * k])?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(TableRow {
                suite: r[0].clone(),
                row: r[1].clone(),
                values,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCheck {
    pub recomputed_averages: BTreeMap<String, f64>,
    pub max_abs_difference: f64,
    pub consistent: bool,
}

/// Recomputes the percentage decreases and averages from `rmse_table.csv`
/// and compares them with `pct_decrease.csv` and the manifest summary.
pub fn check_report(out: &Path) -> Result<ReportCheck> {
    let rows = read_rmse_table(&out.join("rmse_table.csv"))?;
    let (pct, averages) = pct_from_rows(&rows)?;
    let mut diff: f64 = 0.0;
    let (_, stored) = read_csv(&out.join("pct_decrease.csv"))?;
    let mut expected: Vec<(String, String, f64)> = pct.iter().map(|p| (p.suite.clone(), p.row.clone(), p.pct_decrease)).collect();
    expected.extend(averages.iter().map(|(f, a)| (f.clone(), "average".to_string(), *a)));
    if stored.len() != expected.len() {
        return Err(Error::Inconsistent(format!(
            "pct_decrease.csv has {} rows, recomputation gives {}",
            stored.len(),
            expected.len()
        )));
    }
    for (s, e) in stored.iter().zip(&expected) {
        if s[0] != e.0 || s[1] != e.1 {
            return Err(Error::Inconsistent(format!("row {}/{} does not match {}/{}", s[0], s[1], e.0, e.1)));
        }
        diff = diff.max((to_f64(&s[2])? - e.2).abs());
    }
    let manifest_path = out.join("manifest.json");
    if manifest_path.exists() {
        let m = Manifest::load(&manifest_path)?;
        if let Some(obj) = m.summary.get("average_decrease").and_then(|v| v.as_object()) {
            for (f, a) in &averages {
                let reported = obj.get(f).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                diff = diff.max((reported - a).abs());
            }
        }
    }
    let consistent = diff <= 1e-9;
    Ok(ReportCheck {
        recomputed_averages: averages,
        max_abs_difference: if diff.is_nan() { f64::INFINITY } else { diff },
        consistent: consistent && !diff.is_nan(),
    })
}

fn run_report(cfg: &ExperimentConfig) -> Result<Outcome> {
    let out = &cfg.out_dir;
    if !out.join("rmse_table.csv").exists() {
        return Err(Error::Config(format!("{} has no rmse_table.csv; run bench first", out.display())));
    }
    let check = check_report(out)?;
    let mut lines: Vec<String> = check
        .recomputed_averages
        .iter()
        .map(|(f, a)| format!("average decrease ({f}): {a:.4}%"))
        .collect();
    lines.push(format!(
        "consistency: {} (max difference {:.3e})",
        if check.consistent { "ok" } else { "MISMATCH" },
        check.max_abs_difference
    ));
    let mut text = serde_json::to_string_pretty(&check)?;
    text.push('\n');
    std::fs::write(out.join("report.json"), text)?;
    if !check.consistent {
        return Err(Error::Inconsistent(format!(
            "reported averages differ from the table by {:.3e}",
            check.max_abs_difference
        )));
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        command: Command::Report.name().into(),
        seed_mode: cfg.seed_mode,
        artifacts: Vec::new(),
        failures: Vec::new(),
        summary: serde_json::to_value(&check)?,
    };
    Ok(Outcome {
        manifest,
        lines,
        bench: None,
        sampling: None,
    })
}

fn run_verify_command(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let report = run_verify(seed)?;
    let mut w = Writer::new(&cfg.out_dir, cfg.hash())?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    w.write("verify.json", text.as_bytes())?;
    let lines = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} {}: max error {:.3e} (tolerance {:.0e}, {} instances)",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.max_error,
                c.tolerance,
                c.instances
            )
        })
        .collect();
    let failures: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let manifest = w.manifest(Command::Verify, cfg.seed_mode, failures.clone(), serde_json::to_value(&report)?)?;
    if let Some(f) = failures.first() {
        return Err(Error::Inconsistent(format!("verification check {f} failed")));
    }
    Ok(Outcome {
        manifest,
        lines,
        bench: None,
        sampling: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentage_examples() {
        assert_eq!(percentage_decrease(1.0, 1.0).unwrap(), 0.0);
        assert!((percentage_decrease(0.1813, 0.1397).unwrap() - 22.95).abs() < 0.01);
        assert!((percentage_decrease(1.0625, 1.1471).unwrap() + 7.96).abs() < 0.01);
        assert!(percentage_decrease(0.0, 1.0).is_err());
    }

    #[test]
    fn config_parsing_and_hash() {
        let c = ExperimentConfig::from_toml_str("seeds = [4]\nsuites = [\"multi-2\"]\n[train]\niterations = 5\n").unwrap();
        assert_eq!(c.seeds, vec![4]);
        assert_eq!(c.suites, vec![SuiteId::MultiInput(2)]);
        assert_eq!(c.train.iterations, 5);
        assert!(ExperimentConfig::from_toml_str("bogus = 1").unwrap_err().is_config());
        assert!(ExperimentConfig::from_toml_str("suites = [\"single-7\"]").unwrap_err().is_config());
        let mut moved = c.clone();
        moved.out_dir = PathBuf::from("elsewhere");
        assert_eq!(c.hash(), moved.hash());
        moved.seeds = vec![5];
        assert_ne!(c.hash(), moved.hash());
    }

    #[test]
    fn validation() {
        let empty = ExperimentConfig {
            seeds: Vec::new(),
            ..Default::default()
        };
        assert!(empty.validate_for(Command::Bench).unwrap_err().is_config());
        let wrong = ExperimentConfig {
            kind: Some(ExperimentKind::BoundarySampling),
            ..Default::default()
        };
        assert!(wrong.validate_for(Command::Bench).unwrap_err().is_config());
        assert!(wrong.validate_for(Command::Sample).is_ok());
    }

    #[test]
    fn seed_modes() {
        let mut c = ExperimentConfig {
            seeds: vec![7, 8],
            ..Default::default()
        };
        assert_eq!(c.runs().len(), 6);
        c.seed_mode = SeedMode::PerModel;
        assert_eq!(
            c.runs(),
            vec![(ModelKind::Sogpr, 7), (ModelKind::ConventionalMogpr, 8), (ModelKind::MogprNtm, 7)]
        );
    }
}
