//! Synthetic datasets and the deterministic 4-mode oracle surface.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;

/// Scales of the two base noise sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub gaussian_std: f64,
    pub laplace_scale: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gaussian_std: 0.3,
            laplace_scale: 0.5,
        }
    }
}

impl NoiseSpec {
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            gaussian_std: self.gaussian_std * factor,
            laplace_scale: self.laplace_scale * factor,
        }
    }
}

/// `gaussian · ε + laplace · η`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecipe {
    pub gaussian: f64,
    pub laplace: f64,
}

impl NoiseRecipe {
    pub const GAUSSIAN: Self = Self {
        gaussian: 1.0,
        laplace: 0.0,
    };
    pub const LAPLACE: Self = Self {
        gaussian: 0.0,
        laplace: 1.0,
    };

    /// Per-output recipes of the three-output suites: 0.5ε, 0.5η, 0.5η + 0.5ε.
    pub fn suite_defaults() -> [Self; 3] {
        [
            Self {
                gaussian: 0.5,
                laplace: 0.0,
            },
            Self {
                gaussian: 0.0,
                laplace: 0.5,
            },
            Self {
                gaussian: 0.5,
                laplace: 0.5,
            },
        ]
    }
}

fn laplace_draw<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    // inverse CDF on u ∈ (−½, ½)
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

fn draw_noise<R: Rng>(rng: &mut R, spec: NoiseSpec, recipe: NoiseRecipe, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, spec.gaussian_std.max(0.0)).expect("finite std");
    (0..n)
        .map(|_| {
            let e = normal.sample(rng);
            let l = laplace_draw(rng, spec.laplace_scale);
            recipe.gaussian * e + recipe.laplace * l
        })
        .collect()
}

/// Seeded noise vector composed per `recipe`.
pub fn sample_noise(spec: NoiseSpec, recipe: NoiseRecipe, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Empty("noise sample count"));
    }
    if !(spec.gaussian_std >= 0.0) || !(spec.laplace_scale >= 0.0) {
        return Err(Error::invalid("noise scales must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_noise(&mut rng, spec, recipe, n))
}

/// y₁(x) = 1 + sin(0.5x), y₂(x) = 3 + 0.5 sin(1.5x).
pub fn motivation_functions(x: f64) -> [f64; 2] {
    [1.0 + (0.5 * x).sin(), 3.0 + 0.5 * (1.5 * x).sin()]
}

pub const MOTIVATION_POINTS: usize = 15;
pub const MOTIVATION_NOISE: [f64; 2] = [0.1, 0.2];

/// 15 evenly spaced points on [0, 10] with output noise std 0.1 and 0.2.
pub fn gen_motivation_pair(seed: u64) -> Dataset {
    let n = MOTIVATION_POINTS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|i| 10.0 * i as f64 / (n - 1) as f64).collect();
    let mut y = DMatrix::zeros(n, 2);
    for (t, std) in MOTIVATION_NOISE.iter().enumerate() {
        let normal = Normal::new(0.0, *std).expect("finite std");
        for (i, x) in xs.iter().enumerate() {
            y[(i, t)] = motivation_functions(*x)[t] + normal.sample(&mut rng);
        }
    }
    Dataset::new(DMatrix::from_column_slice(n, 1, &xs), y)
        .and_then(|d| d.with_bounds(vec![(0.0, 10.0)]))
        .expect("valid construction")
}

/// Which closed-form suite.
/// Serialized as its label, e.g. `"single-2"` or `"multi-1"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SuiteId {
    SingleInput(u8),
    MultiInput(u8),
}

impl SuiteId {
    pub fn all() -> Vec<SuiteId> {
        let mut v: Vec<SuiteId> = (1..=3).map(SuiteId::SingleInput).collect();
        v.extend((1..=3).map(SuiteId::MultiInput));
        v
    }

    pub fn group(self) -> u8 {
        match self {
            SuiteId::SingleInput(g) | SuiteId::MultiInput(g) => g,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            SuiteId::SingleInput(_) => 1,
            SuiteId::MultiInput(_) => 3,
        }
    }

    pub fn label(self) -> String {
        match self {
            SuiteId::SingleInput(g) => format!("single-{g}"),
            SuiteId::MultiInput(g) => format!("multi-{g}"),
        }
    }

    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            SuiteId::SingleInput(2) => vec![(-3.5, 3.5)],
            SuiteId::SingleInput(_) => vec![(0.0, 10.0)],
            SuiteId::MultiInput(_) => vec![(-2.0, 2.0); 3],
        }
    }

    fn validate(self) -> Result<()> {
        if (1..=3).contains(&self.group()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("unknown suite group {}", self.group())))
        }
    }

    /// Noise-free outputs at `x`.
    pub fn evaluate(self, x: &[f64]) -> Result<[f64; 3]> {
        self.validate()?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "suite input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self {
            SuiteId::SingleInput(g) => single_input(g, x[0]),
            SuiteId::MultiInput(g) => multi_input(g, [x[0], x[1], x[2]]),
        }
    }
}

impl std::str::FromStr for SuiteId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parsed = match s.split_once('-') {
            Some(("single", g)) => g.parse().ok().map(SuiteId::SingleInput),
            Some(("multi", g)) => g.parse().ok().map(SuiteId::MultiInput),
            _ => None,
        };
        let suite = parsed.ok_or_else(|| Error::Config(format!("unknown suite {s:?} (expected single-N or multi-N)")))?;
        suite
            .validate()
            .map_err(|_| Error::Config(format!("unknown suite {s:?}: groups are 1 to 3")))?;
        Ok(suite)
    }
}

impl TryFrom<String> for SuiteId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SuiteId> for String {
    fn from(s: SuiteId) -> String {
        s.label()
    }
}

impl std::fmt::Display for SuiteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

fn single_input(group: u8, x: f64) -> Result<[f64; 3]> {
    Ok(match group {
        1 => {
            let y1 = (2.0 * PI * x).sin() + 0.15 * x * x;
            let y2 = 0.9 * y1 * y1 + 0.1 * x;
            let y3 = 0.3 * y1 * y1 + 0.2 * y1 * y2 + 0.2 * y2 * y2 + 0.01 * x;
            [y1, y2, y3]
        }
        2 => {
            if x.abs() >= 4.0 {
                return Err(Error::OutOfDomain(format!("group 2 requires |x| < 4, got {x}")));
            }
            let y1 = 0.5 * ((4.0 + x) / (4.0 - x)).ln() + 0.05 * x.powi(3);
            let y2 = 0.2 * y1.powi(3) + 0.1 * x;
            let y3 = 0.3 * y1.powi(3) + 0.2 * y1 * y2 + 0.2 * y2 * y2 + 0.8 * x;
            [y1, y2, y3]
        }
        _ => {
            let y1 = x.tanh() + 0.1 * x * x;
            let y2 = 0.9 * y1 * y1 + 0.1 * x;
            let y3 = 0.3 * y1 * y1 + 0.2 * y1 * y2 + 0.2 * y2 * y2 + 0.01 * x;
            [y1, y2, y3]
        }
    })
}

const SINGULAR_TOL: f64 = 1e-12;

fn log_abs(v: f64, what: &str) -> Result<f64> {
    if v.abs() < SINGULAR_TOL {
        return Err(Error::OutOfDomain(format!("log|{what}| is singular at {what} = {v}")));
    }
    Ok(v.abs().ln())
}

fn multi_input(group: u8, [x1, x2, x3]: [f64; 3]) -> Result<[f64; 3]> {
    let cross = 0.01 * (x1 * x2 + x2 * x3 + x3 * x1);
    let base = || {
        (2.0 * PI * x1).sin() + (2.0 * PI * x2).cos() + x3.tanh() + 0.15 * x1 * x1 + 0.05 * x2.powi(3) + 0.1 * x3 * x3
    };
    Ok(match group {
        1 => {
            let y1 = base();
            let y2 = 0.9 * y1 * y1 + 0.8 * y1 + 0.01 * (x1 + x2 + x3);
            let y3 = 0.3 * y1 * y1 + 0.2 * y1 * y2 + 0.2 * y2 * y2 + cross;
            [y1, y2, y3]
        }
        2 => {
            let y1 = base();
            let y2 = 0.9 * y1 * y1 + 10.0 * log_abs(y1, "y1")? + 0.1 * (x1 + x2 * x2 + x3.powi(3));
            let y3 = 0.3 * y1 * y1 + 0.2 * y1 * y2 + 0.2 * y2 * y2 + cross;
            [y1, y2, y3]
        }
        _ => {
            let p = x1 * x2;
            let y1 = 0.35 * p / (1.0 + p.abs())
                + 0.25 * x3.abs().sqrt()
                + 0.2 * (2.0 * PI * x1).cos()
                + 0.15 * (x2 - x3).abs().powf(1.5);
            let q = x2 * y1;
            let y2 = 0.45 * y1 * y1
                + 0.3 * y1 * (x1 * x3).atan()
                + 0.25 * q / (1.0 + q.abs())
                + 0.15 * (1.0 + x1 * x1 + x3 * x3).ln();
            let y3 = 0.6 * y1 + 0.4 * y2.sin() * x1 - 0.2 * y1 * x2.tanh()
                + 0.3 * log_abs(y2, "y2")? * x3
                + 0.15 * (x1 - x2).powi(2);
            [y1, y2, y3]
        }
    })
}

/// Noise multiplier applied to the multi-input suites.
pub const ELEVATED_NOISE_FACTOR: f64 = 2.0;

const MAX_RESAMPLES: usize = 1000;

fn gen_suite(suite: SuiteId, n: usize, seed: u64, noise: NoiseSpec) -> Result<Dataset> {
    suite.validate()?;
    if n == 0 {
        return Err(Error::Empty("suite sample count"));
    }
    let bounds = suite.bounds();
    let d = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, d);
    let mut y = DMatrix::zeros(n, 3);
    for i in 0..n {
        let mut attempts = 0;
        loop {
            let p: Vec<f64> = bounds.iter().map(|(a, b)| rng.random_range(*a..*b)).collect();
            match suite.evaluate(&p) {
                Ok(v) if v.iter().all(|f| f.is_finite()) => {
                    for (k, val) in p.iter().enumerate() {
                        x[(i, k)] = *val;
                    }
                    for (t, val) in v.iter().enumerate() {
                        y[(i, t)] = *val;
                    }
                    break;
                }
                Ok(_) | Err(Error::OutOfDomain(_)) => {
                    attempts += 1;
                    if attempts >= MAX_RESAMPLES {
                        return Err(Error::OutOfDomain(format!(
                            "{}: no valid point after {MAX_RESAMPLES} resamples",
                            suite.label()
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    for (t, recipe) in NoiseRecipe::suite_defaults().iter().enumerate() {
        let eps = draw_noise(&mut rng, noise, *recipe, n);
        for (i, e) in eps.iter().enumerate() {
            y[(i, t)] += e;
        }
    }
    Dataset::new(x, y)?.with_bounds(bounds)
}

/// `n` uniform draws from the group's interval with per-output noise.
pub fn gen_single_input_group(group: u8, n: usize, seed: u64, noise: NoiseSpec) -> Result<Dataset> {
    gen_suite(SuiteId::SingleInput(group), n, seed, noise)
}

/// `n` uniform draws from [−2, 2]³; the caller chooses the (elevated) noise scale.
pub fn gen_multi_input_group(group: u8, n: usize, seed: u64, noise: NoiseSpec) -> Result<Dataset> {
    gen_suite(SuiteId::MultiInput(group), n, seed, noise)
}

pub fn gen_suite_dataset(suite: SuiteId, n: usize, seed: u64, noise: NoiseSpec) -> Result<Dataset> {
    match suite {
        SuiteId::SingleInput(g) => gen_single_input_group(g, n, seed, noise),
        SuiteId::MultiInput(g) => gen_multi_input_group(g, n, seed, noise.scaled(ELEVATED_NOISE_FACTOR)),
    }
}

/// Metadata block written in front of exported datasets.
pub fn dataset_metadata(suite: &str, seed: u64, noise: &NoiseSpec) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("suite".to_string(), suite.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("gaussian_std".to_string(), format!("{:?}", noise.gaussian_std)),
        ("laplace_scale".to_string(), format!("{:?}", noise.laplace_scale)),
    ])
}

/// Black-box scenario evaluator.
pub trait Oracle {
    fn dim(&self) -> usize;
    fn outputs(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Piecewise-constant 2-metric surface over [0, 50] × [0, 25].
///
/// Two smooth threshold curves split the space into four modes:
/// `h₁(x) = x₁ − c₁ − a₁ sin(x₂ / p₁)` and `h₂(x) = x₂ − c₂ − a₂ cos(x₁ / p₂)`,
/// with mode `[h₁ > 0] + 2·[h₂ > 0]`. Each metric additionally carries a
/// compactly supported bump of half-width `bump_width` around its curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSurface {
    pub bounds: [(f64, f64); 2],
    pub centers: [f64; 2],
    pub amplitudes: [f64; 2],
    pub periods: [f64; 2],
    pub levels: [[f64; 2]; 4],
    pub bump_height: f64,
    pub bump_width: f64,
}

impl Default for OracleSurface {
    fn default() -> Self {
        Self {
            bounds: [(0.0, 50.0), (0.0, 25.0)],
            centers: [15.0, 13.0],
            amplitudes: [4.0, 3.0],
            periods: [4.0, 8.0],
            levels: [[1.0, 1.0], [3.0, 1.0], [1.0, 3.0], [3.0, 3.0]],
            bump_height: 0.25,
            bump_width: 1.0,
        }
    }
}

impl OracleSurface {
    pub fn h1(&self, x: &[f64]) -> f64 {
        x[0] - self.centers[0] - self.amplitudes[0] * (x[1] / self.periods[0]).sin()
    }

    pub fn h2(&self, x: &[f64]) -> f64 {
        x[1] - self.centers[1] - self.amplitudes[1] * (x[0] / self.periods[1]).cos()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == 2 && x.iter().zip(&self.bounds).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Analytic mode label in `0..4`.
    pub fn mode(&self, x: &[f64]) -> usize {
        usize::from(self.h1(x) > 0.0) + 2 * usize::from(self.h2(x) > 0.0)
    }

    fn bump(&self, h: f64) -> f64 {
        let r = h / self.bump_width;
        if r.abs() < 1.0 {
            self.bump_height * (1.0 - r * r).powi(2)
        } else {
            0.0
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<[f64; 2]> {
        if !self.contains(x) {
            return Err(Error::OutOfDomain(format!("{x:?} outside the testing space")));
        }
        let level = self.levels[self.mode(x)];
        Ok([level[0] + self.bump(self.h1(x)), level[1] + self.bump(self.h2(x))])
    }

    /// Points on both threshold curves, inside the testing space.
    pub fn boundary_points(&self, per_curve: usize) -> Vec<[f64; 2]> {
        let [(a1, b1), (a2, b2)] = self.bounds;
        let mut pts = Vec::with_capacity(2 * per_curve);
        for k in 0..per_curve {
            let s = k as f64 / (per_curve - 1).max(1) as f64;
            let x2 = a2 + s * (b2 - a2);
            let x1 = self.centers[0] + self.amplitudes[0] * (x2 / self.periods[0]).sin();
            if x1 >= a1 && x1 <= b1 {
                pts.push([x1, x2]);
            }
            let x1 = a1 + s * (b1 - a1);
            let x2 = self.centers[1] + self.amplitudes[1] * (x1 / self.periods[1]).cos();
            if x2 >= a2 && x2 <= b2 {
                pts.push([x1, x2]);
            }
        }
        pts
    }

    /// Euclidean distance to the nearest threshold curve (dense sampling, spacing ≈ 0.005).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        thread_local! {
            static CACHE: std::cell::RefCell<Option<(OracleSurface, Vec<[f64; 2]>)>> = const { std::cell::RefCell::new(None) };
        }
        CACHE.with(|c| {
            let mut c = c.borrow_mut();
            if c.as_ref().is_none_or(|(s, _)| s != self) {
                *c = Some((self.clone(), self.boundary_points(10_001)));
            }
            let pts = &c.as_ref().expect("filled").1;
            pts.iter()
                .map(|p| ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// A point deep inside `mode`, where the metrics equal the level vector exactly.
    pub fn anchor(&self, mode: usize) -> [f64; 2] {
        match mode {
            0 => [5.0, 4.0],
            1 => [35.0, 4.0],
            2 => [5.0, 22.0],
            _ => [35.0, 22.0],
        }
    }
}

impl Oracle for OracleSurface {
    fn dim(&self) -> usize {
        2
    }

    fn outputs(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval(x).map(|v| v.to_vec())
    }
}

/// `oracle_eval` in free-function form.
pub fn oracle_eval(surface: &OracleSurface, x: &[f64]) -> Result<[f64; 2]> {
    surface.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motivation_closed_form() {
        assert_eq!(motivation_functions(0.0), [1.0, 3.0]);
        assert!((motivation_functions(PI)[0] - 2.0).abs() < 1e-15);
        let d = gen_motivation_pair(3);
        assert_eq!(d.len(), 15);
        assert_eq!(d.x[(0, 0)], 0.0);
        assert_eq!(d.x[(14, 0)], 10.0);
        assert_eq!(gen_motivation_pair(3), d);
    }

    #[test]
    fn single_input_hand_values() {
        let g1 = SuiteId::SingleInput(1);
        assert_eq!(g1.evaluate(&[0.0]).unwrap()[0], 0.0);
        let v = g1.evaluate(&[0.5]).unwrap();
        assert!((v[0] - 0.0375).abs() < 1e-12);
        assert!((v[1] - 0.051_265_625).abs() < 1e-12);
        assert!(SuiteId::SingleInput(2).evaluate(&[4.0]).is_err());
        assert!(SuiteId::SingleInput(2).evaluate(&[-4.5]).is_err());
    }

    #[test]
    fn multi_input_origin() {
        let v = SuiteId::MultiInput(1).evaluate(&[0.0, 0.0, 0.0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] - 1.7).abs() < 1e-12);
        assert!((v[2] - 1.218).abs() < 1e-12);
    }

    #[test]
    fn noise_statistics() {
        let n = 100_000;
        let spec = NoiseSpec::default();
        let e = sample_noise(spec, NoiseRecipe::GAUSSIAN, n, 1).unwrap();
        let mean = e.iter().sum::<f64>() / n as f64;
        let std = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 0.01);
        assert!((std - 0.3).abs() < 0.01);
        let l = sample_noise(spec, NoiseRecipe::LAPLACE, n, 2).unwrap();
        let mean = l.iter().sum::<f64>() / n as f64;
        let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 0.5).abs() < 0.02);
        assert_eq!(sample_noise(spec, NoiseRecipe::LAPLACE, 10, 9).unwrap(), sample_noise(spec, NoiseRecipe::LAPLACE, 10, 9).unwrap());
        assert!(sample_noise(spec, NoiseRecipe::LAPLACE, 0, 9).is_err());
    }

    #[test]
    fn generators_are_reproducible_and_in_domain() {
        for suite in SuiteId::all() {
            let a = gen_suite_dataset(suite, 40, 5, NoiseSpec::default()).unwrap();
            let b = gen_suite_dataset(suite, 40, 5, NoiseSpec::default()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.dim(), suite.dim());
            for (k, (lo, hi)) in suite.bounds().iter().enumerate() {
                assert!(a.x.column(k).iter().all(|v| v >= lo && v <= hi));
            }
        }
    }

    #[test]
    fn oracle_modes_and_anchors() {
        let s = OracleSurface::default();
        for m in 0..4 {
            let a = s.anchor(m);
            assert_eq!(s.mode(&a), m);
            assert_eq!(s.eval(&a).unwrap(), s.levels[m]);
        }
        assert!(s.eval(&[-1.0, 3.0]).is_err());
        assert!(s.eval(&[1.0, 30.0]).is_err());
        let x = [15.0 + 4.0 * (10f64 / 4.0).sin(), 10.0];
        assert!(s.mode(&[x[0] - 0.01, x[1]]) != s.mode(&[x[0] + 0.01, x[1]]));
        assert!(s.boundary_distance(&x) < 1e-2);
    }
}
