//! Self-checks behind the `verify` subcommand.
//!
//! The reference GP here inverts the training covariance with an LU
//! decomposition and evaluates kernels from their closed forms, so it shares
//! nothing with the Cholesky path it is compared against.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{CoregionalizationParams, InputKernelParams, KernelKind, LatentProcess, NoiseParams};
use crate::error::{Error, Result};
use crate::gp::params::pack;
use crate::gp::{evaluate, log_marginal_likelihood, predict, Dataset, HyperParameters, ParamLayout};
use crate::ntm::{RegularizationConfig, RegularizationState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, instances: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_error,
            tolerance,
            passed: max_error < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// Kernel value from the textbook formulas.
pub fn reference_kernel(p: &InputKernelParams, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let (l, s2) = (p.lengthscale, p.amplitude);
    match p.kind {
        KernelKind::SquaredExponential => s2 * (-r2 / (2.0 * l * l)).exp(),
        KernelKind::SquaredExponentialWide => s2 * (-r2 / (4.0 * l * l)).exp(),
        KernelKind::Matern52 => {
            let r = r2.sqrt();
            let u = 5f64.sqrt() * r / l;
            s2 * (1.0 + u + u * u / 3.0) * (-u).exp()
        }
        KernelKind::RationalQuadratic => s2 * (1.0 + r2 / (2.0 * p.alpha * l * l)).powf(-p.alpha),
    }
}

/// Single-output posterior mean and latent variance by explicit inversion.
pub fn reference_predict(
    kernel: &InputKernelParams,
    noise: f64,
    x: &DMatrix<f64>,
    y: &[f64],
    xq: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
    let (xr, qr) = (rows(x), rows(xq));
    let n = xr.len();
    let k = DMatrix::from_fn(n, n, |i, j| reference_kernel(kernel, &xr[i], &xr[j]) + if i == j { noise } else { 0.0 });
    let kinv = k
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::invalid("reference covariance is singular"))?;
    let mut mean = Vec::with_capacity(qr.len());
    let mut var = Vec::with_capacity(qr.len());
    for q in &qr {
        let ks: Vec<f64> = xr.iter().map(|p| reference_kernel(kernel, q, p)).collect();
        let mut m = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            let mut row_y = 0.0;
            let mut row_k = 0.0;
            for j in 0..n {
                row_y += kinv[(i, j)] * y[j];
                row_k += kinv[(i, j)] * ks[j];
            }
            m += ks[i] * row_y;
            quad += ks[i] * row_k;
        }
        mean.push(m);
        var.push(reference_kernel(kernel, q, q) - quad);
    }
    Ok((mean, var))
}

fn random_kernel(rng: &mut ChaCha8Rng, kind: KernelKind) -> InputKernelParams {
    let mut k = InputKernelParams::new(kind, rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    k.alpha = rng.random_range(0.5..3.0);
    k
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
}

/// Random LMC instance with `n ≤ 8` points and `t ≤ 3` outputs.
fn random_instance(rng: &mut ChaCha8Rng, kind: KernelKind) -> (HyperParameters, Dataset) {
    let n = rng.random_range(2..=8);
    let t = rng.random_range(1..=3);
    let d = rng.random_range(1..=2);
    let q = rng.random_range(1..=2);
    let latents = (0..q)
        .map(|_| {
            let factor = DMatrix::from_fn(t, t, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => rng.random_range(0.5..1.5),
                std::cmp::Ordering::Greater => rng.random_range(-0.8..0.8),
            });
            LatentProcess {
                kernel: random_kernel(rng, kind),
                coreg: CoregionalizationParams { factor },
            }
        })
        .collect();
    let noise = NoiseParams {
        global: rng.random_range(1e-3..1e-2),
        per_output: (0..t).map(|_| rng.random_range(0.05..0.5)).collect(),
    };
    let x = random_inputs(rng, n, d);
    let y = DMatrix::from_fn(n, t, |_, _| rng.random_range(-2.0..2.0));
    (HyperParameters { latents, noise }, Dataset::new(x, y).expect("consistent shapes"))
}

/// Relative error `‖a − b‖ / ‖b‖`.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Analytic vs central-difference gradient of `−mll/NT + penalty` in unconstrained space.
///
/// Odd instances carry an active regularization term with random weights.
pub fn gradient_check(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let kind = KernelKind::ALL[k % KernelKind::ALL.len()];
        let (h, data) = random_instance(&mut rng, kind);
        let layout = ParamLayout::of(&h);
        let raw = pack(&h, &layout);
        let scale = (data.len() * data.outputs()) as f64;
        let state = if k % 2 == 1 && data.outputs() > 1 {
            let mut s = RegularizationState::new(RegularizationConfig::default(), data.outputs())?;
            for w in s.weights.values_mut() {
                *w = rng.random_range(0.1..2.0);
            }
            Some(s)
        } else {
            None
        };
        let objective = |r: &[f64]| -> Result<f64> {
            let hh = crate::gp::params::unpack(&h, &layout, r);
            let mut v = -log_marginal_likelihood(&hh, &data)? / scale;
            if let Some(s) = &state {
                v += s.penalty(s.config.start_iteration, &hh, &layout, r, &s.deltas(&hh)).0;
            }
            Ok(v)
        };
        let e = evaluate(&h, &data)?;
        let mut analytic: Vec<f64> = e.gradient.iter().map(|g| -g / scale).collect();
        if let Some(s) = &state {
            let (_, pg) = s.penalty(s.config.start_iteration, &h, &layout, &raw, &s.deltas(&h));
            for (a, p) in analytic.iter_mut().zip(pg) {
                *a += p;
            }
        }
        let mut numeric = Vec::with_capacity(raw.len());
        for i in 0..raw.len() {
            let step = 1e-5 * raw[i].abs().max(1.0);
            let mut up = raw.clone();
            let mut down = raw.clone();
            up[i] += step;
            down[i] -= step;
            numeric.push((objective(&up)? - objective(&down)?) / (2.0 * step));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(CheckResult::new("gradient-vs-finite-difference", instances, worst, 1e-5))
}

/// Single-output predictions against [`reference_predict`].
pub fn textbook_equivalence(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let kind = KernelKind::ALL[k % KernelKind::ALL.len()];
        let n = rng.random_range(2..=12);
        let d = rng.random_range(1..=3);
        let kernel = random_kernel(&mut rng, kind);
        let noise = NoiseParams {
            global: rng.random_range(0.0..1e-2),
            per_output: vec![rng.random_range(0.01..0.5)],
        };
        let x = random_inputs(&mut rng, n, d);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let xq = random_inputs(&mut rng, 5, d);
        let h = HyperParameters::new(kernel.clone(), 1, noise.clone());
        let data = Dataset::new(x.clone(), DMatrix::from_column_slice(n, 1, &y))?;
        let p = predict(&h, &data, &xq)?;
        let (m, v) = reference_predict(&kernel, noise.effective(0), &x, &y, &xq)?;
        for i in 0..xq.nrows() {
            worst = worst.max((p.mean[(i, 0)] - m[i]).abs()).max((p.variance[(i, 0)] - v[i]).abs());
        }
    }
    Ok(CheckResult::new("single-output-vs-textbook", instances, worst, 1e-8))
}

/// Joint model with `A = I` against one reference GP per output.
pub fn independent_equivalence(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let kind = KernelKind::ALL[k % KernelKind::ALL.len()];
        let n = rng.random_range(2..=10);
        let t = rng.random_range(2..=3);
        let kernel = random_kernel(&mut rng, kind);
        let noise = NoiseParams {
            global: rng.random_range(0.0..1e-2),
            per_output: (0..t).map(|_| rng.random_range(0.01..0.5)).collect(),
        };
        let x = random_inputs(&mut rng, n, 2);
        let y = DMatrix::from_fn(n, t, |_, _| rng.random_range(-2.0..2.0));
        let xq = random_inputs(&mut rng, 4, 2);
        let h = HyperParameters::new(kernel.clone(), t, noise.clone());
        let p = predict(&h, &Dataset::new(x.clone(), y.clone())?, &xq)?;
        for o in 0..t {
            let col: Vec<f64> = y.column(o).iter().copied().collect();
            let (m, v) = reference_predict(&kernel, noise.effective(o), &x, &col, &xq)?;
            for i in 0..xq.nrows() {
                worst = worst.max((p.mean[(i, o)] - m[i]).abs()).max((p.variance[(i, o)] - v[i]).abs());
            }
        }
    }
    Ok(CheckResult::new("identity-coregionalization-vs-independent", instances, worst, 1e-6))
}

pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let checks = vec![
        gradient_check(50, seed)?,
        textbook_equivalence(20, seed.wrapping_add(1))?,
        independent_equivalence(20, seed.wrapping_add(2))?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_kernel_at_zero_distance_is_amplitude() {
        for kind in KernelKind::ALL {
            let p = InputKernelParams::new(kind, 0.7, 1.3);
            assert!((reference_kernel(&p, &[0.2, 0.1], &[0.2, 0.1]) - 1.3).abs() < 1e-15);
        }
    }

    #[test]
    fn verify_suite_passes() {
        let r = run_verify(0).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
