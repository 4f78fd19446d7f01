//! Zero-mean GP posterior for the joint multi-output model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::covariance::{coreg_matrix, cross_gram, factorize, joint_covariance, latent_outputs};
use crate::error::{Error, Result};
use crate::gp::{Dataset, HyperParameters, Standardizer};

/// Variances in `[-VARIANCE_CLAMP, 0)` are clamped to zero; anything lower is an error.
pub const VARIANCE_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Prediction {
    /// M×T posterior means.
    pub mean: DMatrix<f64>,
    /// M×T marginal variances of the latent function.
    pub variance: DMatrix<f64>,
    /// Effective observation noise `σ_g² + σ_t²` per output.
    pub noise: Vec<f64>,
    /// `(K̃+Σ)⁻¹ y`
    pub alpha: DVector<f64>,
    /// How many variances were clamped from slightly negative to zero.
    pub clamped: usize,
}

impl Prediction {
    /// Variance of a new noisy observation: latent variance plus output noise.
    pub fn predictive_variance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.variance.nrows(), self.variance.ncols(), |i, t| {
            self.variance[(i, t)] + self.noise[t]
        })
    }

    pub fn std_dev(&self) -> DMatrix<f64> {
        self.variance.map(f64::sqrt)
    }
}

/// Factorized training covariance ready for repeated queries.
#[derive(Clone)]
pub struct Posterior {
    params: HyperParameters,
    coregs: Vec<DMatrix<f64>>,
    x: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    pub jitter: f64,
}

impl std::fmt::Debug for Posterior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Posterior")
            .field("points", &self.x.nrows())
            .field("outputs", &self.params.outputs())
            .field("jitter", &self.jitter)
            .finish()
    }
}

impl Posterior {
    pub fn new(h: &HyperParameters, data: &Dataset) -> Result<Self> {
        h.validate()?;
        let t = latent_outputs(&h.latents)?;
        if data.outputs() != t {
            return Err(Error::DimensionMismatch {
                context: "dataset outputs vs hyperparameters",
                expected: t,
                got: data.outputs(),
            });
        }
        let coregs = h
            .latents
            .iter()
            .map(|l| coreg_matrix(&l.coreg))
            .collect::<Result<Vec<_>>>()?;
        if data.is_empty() {
            return Ok(Self {
                params: h.clone(),
                coregs,
                x: data.x.clone(),
                chol: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let jc = joint_covariance(&h.latents, &data.x, &h.noise)?;
        let f = factorize(&jc.noisy)?;
        let alpha = f.chol.solve(&data.stacked_y());
        Ok(Self {
            params: h.clone(),
            coregs,
            x: data.x.clone(),
            chol: Some(f.chol),
            alpha,
            jitter: f.jitter,
        })
    }

    pub fn params(&self) -> &HyperParameters {
        &self.params
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn check_query(&self, xq: &DMatrix<f64>) -> Result<()> {
        if xq.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "query dimension",
                expected: self.x.ncols(),
                got: xq.ncols(),
            });
        }
        if xq.nrows() == 0 {
            return Err(Error::Empty("query points"));
        }
        Ok(())
    }

    /// (NT)×(MT) cross-covariance between training and query points.
    fn cross(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (n, m, t) = (self.x.nrows(), xq.nrows(), self.params.outputs());
        let mut ks = DMatrix::zeros(n * t, m * t);
        for (l, a) in self.params.latents.iter().zip(&self.coregs) {
            let kx = cross_gram(&l.kernel, &self.x, xq)?;
            crate::covariance::add_kron(&mut ks, a, &kx);
        }
        Ok(ks)
    }

    pub fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_query(xq)?;
        let (m, t) = (xq.nrows(), self.params.outputs());
        if self.chol.is_none() {
            return Ok(DMatrix::zeros(m, t));
        }
        let ks = self.cross(xq)?;
        let mu = ks.tr_mul(&self.alpha);
        Ok(DMatrix::from_column_slice(m, t, mu.as_slice()))
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction> {
        self.check_query(xq)?;
        let (m, t) = (xq.nrows(), self.params.outputs());
        let prior: Vec<f64> = (0..t)
            .map(|o| {
                self.params
                    .latents
                    .iter()
                    .zip(&self.coregs)
                    .map(|(l, a)| a[(o, o)] * l.kernel.amplitude)
                    .sum()
            })
            .collect();
        let noise = (0..t).map(|o| self.params.noise.effective(o)).collect();
        let Some(chol) = &self.chol else {
            return Ok(Prediction {
                mean: DMatrix::zeros(m, t),
                variance: DMatrix::from_fn(m, t, |_, o| prior[o]),
                noise,
                alpha: self.alpha.clone(),
                clamped: 0,
            });
        };
        let ks = self.cross(xq)?;
        let mu = ks.tr_mul(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .ok_or(Error::NonFinite("triangular solve"))?;
        let mut clamped = 0;
        let mut variance = DMatrix::zeros(m, t);
        for o in 0..t {
            for i in 0..m {
                let col = o * m + i;
                let reduction = v.column(col).norm_squared();
                let mut var = prior[o] - reduction;
                if var < 0.0 {
                    if var >= -VARIANCE_CLAMP {
                        var = 0.0;
                        clamped += 1;
                    } else {
                        return Err(Error::NegativeVariance(var));
                    }
                }
                variance[(i, o)] = var;
            }
        }
        Ok(Prediction {
            mean: DMatrix::from_column_slice(m, t, mu.as_slice()),
            variance,
            noise,
            alpha: self.alpha.clone(),
            clamped,
        })
    }
}

/// Posterior mean and marginal variance at `xq`, computed on the data as given.
pub fn predict(h: &HyperParameters, data: &Dataset, xq: &DMatrix<f64>) -> Result<Prediction> {
    Posterior::new(h, data)?.predict(xq)
}

/// Trained model bundled with the output standardization it was trained under.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub standardizer: Standardizer,
    posterior: Posterior,
}

impl GpModel {
    /// `params` are interpreted on the standardized scale of `data`.
    pub fn fit(params: &HyperParameters, data: &Dataset) -> Result<Self> {
        let standardizer = Standardizer::fit(&data.y);
        Self::with_standardizer(params, data, standardizer)
    }

    pub fn with_standardizer(params: &HyperParameters, data: &Dataset, standardizer: Standardizer) -> Result<Self> {
        let z = standardizer.standardize(data);
        Ok(Self {
            standardizer,
            posterior: Posterior::new(params, &z)?,
        })
    }

    pub fn params(&self) -> &HyperParameters {
        self.posterior.params()
    }

    pub fn outputs(&self) -> usize {
        self.posterior.params().outputs()
    }

    /// Prediction on the original output scale.
    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction> {
        let mut p = self.posterior.predict(xq)?;
        p.mean = self.standardizer.invert_mean(&p.mean);
        p.variance = self.standardizer.invert_variance(&p.variance);
        for (o, n) in p.noise.iter_mut().enumerate() {
            *n *= self.standardizer.std[o] * self.standardizer.std[o];
        }
        Ok(p)
    }

    pub fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.standardizer.invert_mean(&self.posterior.predict_mean(xq)?))
    }
}

/// Anything that maps query points to M×T means and variances on the output scale.
pub trait Surrogate {
    fn outputs(&self) -> usize;
    fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction>;
    fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.predict(xq)?.mean)
    }
    /// Per-output scale that makes outputs comparable (the training standard deviation).
    fn output_scale(&self) -> Vec<f64> {
        vec![1.0; self.outputs()]
    }
}

impl Surrogate for GpModel {
    fn outputs(&self) -> usize {
        GpModel::outputs(self)
    }
    fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction> {
        GpModel::predict(self, xq)
    }
    fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        GpModel::predict_mean(self, xq)
    }
    fn output_scale(&self) -> Vec<f64> {
        self.standardizer.std.clone()
    }
}

/// Independent single-output models queried side by side.
#[derive(Debug, Clone)]
pub struct IndependentModels(pub Vec<GpModel>);

impl Surrogate for IndependentModels {
    fn outputs(&self) -> usize {
        self.0.len()
    }

    fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction> {
        let parts = self.0.iter().map(|m| m.predict(xq)).collect::<Result<Vec<_>>>()?;
        let m = xq.nrows();
        let t = parts.len();
        Ok(Prediction {
            mean: DMatrix::from_fn(m, t, |i, o| parts[o].mean[(i, 0)]),
            variance: DMatrix::from_fn(m, t, |i, o| parts[o].variance[(i, 0)]),
            noise: parts.iter().map(|p| p.noise[0]).collect(),
            alpha: DVector::from_iterator(
                parts.iter().map(|p| p.alpha.len()).sum(),
                parts.iter().flat_map(|p| p.alpha.iter().copied()),
            ),
            clamped: parts.iter().map(|p| p.clamped).sum(),
        })
    }

    fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let parts = self.0.iter().map(|m| m.predict_mean(xq)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(xq.nrows(), parts.len(), |i, o| parts[o][(i, 0)]))
    }

    fn output_scale(&self) -> Vec<f64> {
        self.0.iter().map(|m| m.standardizer.std[0]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{InputKernelParams, KernelKind, NoiseParams};

    fn h(t: usize, noise: f64) -> HyperParameters {
        HyperParameters::new(
            InputKernelParams::new(KernelKind::SquaredExponential, 0.8, 1.5),
            t,
            NoiseParams {
                global: 0.05,
                per_output: vec![noise; t],
            },
        )
    }

    #[test]
    fn empty_data_gives_prior() {
        let p = predict(&h(2, 0.1), &Dataset::empty(1, 2), &DMatrix::from_row_slice(2, 1, &[0.0, 3.0])).unwrap();
        assert!(p.mean.iter().all(|v| *v == 0.0));
        let pv = p.predictive_variance();
        for v in pv.iter() {
            assert!((v - (1.5 + 0.05 + 0.1)).abs() < 1e-14);
        }
    }

    #[test]
    fn noise_free_interpolation() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.5, 4.0]);
        let y = DMatrix::from_row_slice(4, 1, &[0.3, -0.2, 1.1, 0.7]);
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let mut hp = h(1, 0.0);
        hp.noise.global = 0.0;
        let p = predict(&hp, &data, &x).unwrap();
        assert!((p.mean - y).abs().max() < 1e-6);
    }

    #[test]
    fn query_dimension_checked() {
        let data = Dataset::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        assert!(matches!(
            predict(&h(1, 0.1), &data, &DMatrix::zeros(1, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
