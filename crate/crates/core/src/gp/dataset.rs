use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// N inputs (rows of `x`) paired with T outputs (rows of `y`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Testing-space hyperrectangle the inputs are confined to, when known.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::Empty("dataset input or output dimension"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self { x, y, bounds: None })
    }

    /// Empty dataset with the given dimensions.
    pub fn empty(dim: usize, outputs: usize) -> Self {
        Self {
            x: DMatrix::zeros(0, dim),
            y: DMatrix::zeros(0, outputs),
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "dataset bounds",
                expected: self.dim(),
                got: bounds.len(),
            });
        }
        for i in 0..self.len() {
            for (c, &(a, b)) in bounds.iter().enumerate() {
                let v = self.x[(i, c)];
                if v < a || v > b {
                    return Err(Error::OutOfDomain(format!("row {i} coordinate {c} = {v} outside [{a}, {b}]")));
                }
            }
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    /// `[y⁽¹⁾; …; y⁽ᵀ⁾]`
    pub fn stacked_y(&self) -> DVector<f64> {
        // nalgebra is column-major, so the column slice is already output-major
        DVector::from_column_slice(self.y.as_slice())
    }

    pub fn from_stacked(x: DMatrix<f64>, stacked: &DVector<f64>, outputs: usize) -> Result<Self> {
        let n = x.nrows();
        if stacked.len() != n * outputs {
            return Err(Error::DimensionMismatch {
                context: "stacked outputs",
                expected: n * outputs,
                got: stacked.len(),
            });
        }
        let y = DMatrix::from_column_slice(n, outputs, stacked.as_slice());
        Self::new(x, y)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            bounds: self.bounds.clone(),
        }
    }

    /// Single-output slice for output `t`.
    pub fn output(&self, t: usize) -> Self {
        Self {
            x: self.x.clone(),
            y: self.y.columns(t, 1).into_owned(),
            bounds: self.bounds.clone(),
        }
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.dim() || y.len() != self.outputs() {
            return Err(Error::DimensionMismatch {
                context: "dataset push",
                expected: self.dim() + self.outputs(),
                got: x.len() + y.len(),
            });
        }
        let n = self.len();
        self.x = self.x.clone().insert_row(n, 0.0);
        self.y = self.y.clone().insert_row(n, 0.0);
        for (c, v) in x.iter().enumerate() {
            self.x[(n, c)] = *v;
        }
        for (c, v) in y.iter().enumerate() {
            self.y[(n, c)] = *v;
        }
        Ok(())
    }

    pub fn row_x(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn column_y(&self, t: usize) -> Vec<f64> {
        self.y.column(t).iter().copied().collect()
    }

    pub fn to_csv(&self, path: &Path, metadata: &BTreeMap<String, String>) -> Result<()> {
        let mut text = String::new();
        for (k, v) in metadata {
            text.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (1..=self.dim())
            .map(|i| format!("x{i}"))
            .chain((1..=self.outputs()).map(|t| format!("y{t}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let rec: Vec<String> = self.x.row(i).iter().chain(self.y.row(i).iter()).map(|v| format!("{v:?}")).collect();
            w.write_record(&rec)?;
        }
        let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        text.push_str(&String::from_utf8_lossy(&body));
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::to_csv`], returning its metadata block.
    pub fn from_csv(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let text = std::fs::read_to_string(path)?;
        let mut metadata = BTreeMap::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    metadata.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let headers = r.headers()?.clone();
        let dim = headers.iter().filter(|h| h.starts_with('x')).count();
        let outputs = headers.iter().filter(|h| h.starts_with('y')).count();
        if dim + outputs != headers.len() {
            return Err(Error::Format(format!("unexpected dataset columns: {headers:?}")));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad number {field:?}")))?;
                if c < dim {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        let n = xs.len() / dim.max(1);
        let data = Self::new(
            DMatrix::from_row_slice(n, dim, &xs),
            DMatrix::from_row_slice(n, outputs, &ys),
        )?;
        Ok((data, metadata))
    }
}

/// Per-output affine standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(y: &DMatrix<f64>) -> Self {
        let t = y.ncols();
        let mut mean = vec![0.0; t];
        let mut std = vec![1.0; t];
        for o in 0..t {
            let col: Vec<f64> = y.column(o).iter().copied().collect();
            if col.is_empty() {
                continue;
            }
            mean[o] = crate::math::mean(&col);
            let s = crate::math::std_dev(&col);
            std[o] = if s > 1e-12 { s } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn identity(outputs: usize) -> Self {
        Self {
            mean: vec![0.0; outputs],
            std: vec![1.0; outputs],
        }
    }

    pub fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(y.nrows(), y.ncols(), |i, o| (y[(i, o)] - self.mean[o]) / self.std[o])
    }

    pub fn invert_mean(&self, mu: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(mu.nrows(), mu.ncols(), |i, o| mu[(i, o)] * self.std[o] + self.mean[o])
    }

    pub fn invert_variance(&self, var: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(var.nrows(), var.ncols(), |i, o| var[(i, o)] * self.std[o] * self.std[o])
    }

    pub fn standardize(&self, data: &Dataset) -> Dataset {
        Dataset {
            x: data.x.clone(),
            y: self.apply(&data.y),
            bounds: data.bounds.clone(),
        }
    }
}

/// Seeded shuffled split into `⌈ratio·N⌉` training rows and the remainder.
pub fn split_dataset(data: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!("split needs at least 2 rows, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    // the small offset keeps 0.8 * 100 from rounding up to 81
    let n_train = ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut train: Vec<usize> = idx[..n_train].to_vec();
    let mut test: Vec<usize> = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Same as [`split_dataset`] but returns the index sets.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
    let d = Dataset::new(x.clone(), x)?;
    let (a, b) = split_dataset(&d, ratio, seed)?;
    Ok((
        a.x.iter().map(|v| *v as usize).collect(),
        b.x.iter().map(|v| *v as usize).collect(),
    ))
}
