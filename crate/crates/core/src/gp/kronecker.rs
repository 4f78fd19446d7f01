//! Eigendecomposition fast path for single-latent models.
//!
//! With `D = diag(σ_g² + σ_t²)` and `S = D^{-1/2}`, the whitened covariance
//! `(S⊗I)(A⊗K_x + D⊗I)(S⊗I) = (SAS)⊗K_x + I` diagonalizes through the
//! eigenbases of `SAS` and `K_x` separately, so no (NT)×(NT) factorization is needed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::covariance::{coreg_matrix, cross_gram, gram_matrix, InputKernelParams};
use crate::error::{Error, Result};
use crate::gp::{Dataset, HyperParameters, Prediction};

pub struct KroneckerPosterior {
    kernel: InputKernelParams,
    a: DMatrix<f64>,
    x: DMatrix<f64>,
    /// per-output noise scale `1/√d_t`
    whiten: Vec<f64>,
    noise: Vec<f64>,
    u: DMatrix<f64>,
    lambda: DVector<f64>,
    v: DMatrix<f64>,
    s: DVector<f64>,
    /// α as an N×T matrix (column t = output t)
    alpha: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl KroneckerPosterior {
    pub fn new(h: &HyperParameters, data: &Dataset) -> Result<Self> {
        h.validate()?;
        if h.latents.len() != 1 {
            return Err(Error::invalid("Kronecker fast path requires a single latent process"));
        }
        if data.is_empty() {
            return Err(Error::Empty("training data"));
        }
        let t = h.outputs();
        if data.outputs() != t {
            return Err(Error::DimensionMismatch {
                context: "dataset outputs vs hyperparameters",
                expected: t,
                got: data.outputs(),
            });
        }
        let noise: Vec<f64> = (0..t).map(|o| h.noise.effective(o)).collect();
        if noise.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("Kronecker fast path requires strictly positive effective noise"));
        }
        let whiten: Vec<f64> = noise.iter().map(|d| 1.0 / d.sqrt()).collect();
        let latent = &h.latents[0];
        let a = coreg_matrix(&latent.coreg)?;
        let sas = DMatrix::from_fn(t, t, |i, j| whiten[i] * a[(i, j)] * whiten[j]);
        let kx = gram_matrix(&latent.kernel, &data.x)?;
        let ea = SymmetricEigen::new(sas);
        let ek = SymmetricEigen::new(kx);

        let y = data.y.clone();
        let ys = DMatrix::from_fn(y.nrows(), t, |i, o| y[(i, o)] * whiten[o]);
        let mut z = ek.eigenvectors.transpose() * ys * &ea.eigenvectors;
        for j in 0..z.nrows() {
            for i in 0..t {
                z[(j, i)] /= ea.eigenvalues[i] * ek.eigenvalues[j] + 1.0;
            }
        }
        let back = &ek.eigenvectors * z * ea.eigenvectors.transpose();
        let alpha = DMatrix::from_fn(back.nrows(), t, |i, o| back[(i, o)] * whiten[o]);
        Ok(Self {
            kernel: latent.kernel.clone(),
            a,
            x: data.x.clone(),
            whiten,
            noise,
            u: ea.eigenvectors,
            lambda: ea.eigenvalues,
            v: ek.eigenvectors,
            s: ek.eigenvalues,
            alpha,
            y,
        })
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.x.nrows();
        let t = self.noise.len();
        let mut logdet = 0.0;
        for i in 0..t {
            for j in 0..n {
                logdet += (self.lambda[i] * self.s[j] + 1.0).ln();
            }
        }
        logdet += n as f64 * self.noise.iter().map(|d| d.ln()).sum::<f64>();
        let fit = self.y.dot(&self.alpha);
        -0.5 * fit - 0.5 * logdet - 0.5 * (n * t) as f64 * (2.0 * PI).ln()
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<Prediction> {
        if xq.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "query dimension",
                expected: self.x.ncols(),
                got: xq.ncols(),
            });
        }
        let t = self.noise.len();
        let m = xq.nrows();
        let kq = cross_gram(&self.kernel, &self.x, xq)?; // N×M
        let mean = kq.transpose() * &self.alpha * &self.a;
        // b_t = Uᵀ S A[:, t],  c_m = Vᵀ k*_m
        let sa = DMatrix::from_fn(t, t, |i, j| self.whiten[i] * self.a[(i, j)]);
        let b = self.u.transpose() * sa;
        let c = self.v.transpose() * kq;
        let amp = self.kernel.amplitude;
        let mut variance = DMatrix::zeros(m, t);
        for o in 0..t {
            for mi in 0..m {
                let mut quad = 0.0;
                for i in 0..t {
                    let bi = b[(i, o)] * b[(i, o)];
                    for j in 0..self.s.len() {
                        quad += bi * c[(j, mi)] * c[(j, mi)] / (self.lambda[i] * self.s[j] + 1.0);
                    }
                }
                variance[(mi, o)] = (self.a[(o, o)] * amp - quad).max(0.0);
            }
        }
        Ok(Prediction {
            mean,
            variance,
            noise: self.noise.clone(),
            alpha: DVector::from_column_slice(self.alpha.as_slice()),
            clamped: 0,
        })
    }
}
