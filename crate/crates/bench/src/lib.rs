//! Fixtures shared by the criterion benches.

use boundary_scout::benchmarks::{gen_suite_dataset, NoiseSpec, OracleSurface, SuiteId};
use boundary_scout::gp::{fit_model, Dataset, GpModel, TrainConfig};
use boundary_scout::sampler::{latin_hypercube, TestingSpace};
use nalgebra::DMatrix;

pub fn suite_data(n: usize) -> Dataset {
    gen_suite_dataset(SuiteId::SingleInput(1), n, 0, NoiseSpec::default()).expect("suite generation")
}

/// A three-output joint model trained briefly on `n` points.
pub fn trained_model(n: usize) -> GpModel {
    let cfg = TrainConfig {
        iterations: 20,
        ..TrainConfig::default()
    };
    fit_model(&suite_data(n), None, &cfg, None).expect("training").0
}

pub fn oracle_samples(n: usize) -> (OracleSurface, DMatrix<f64>, DMatrix<f64>) {
    let oracle = OracleSurface::default();
    let x = latin_hypercube(&oracle.bounds, n, 0);
    let y = DMatrix::from_fn(n, 2, |i, t| oracle.eval(&[x[(i, 0)], x[(i, 1)]]).expect("inside bounds")[t]);
    (oracle, x, y)
}

pub fn oracle_space() -> TestingSpace {
    TestingSpace::grid(OracleSurface::default().bounds.to_vec(), &[50, 25]).expect("grid")
}
