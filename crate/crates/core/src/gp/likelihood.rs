//! Log marginal likelihood of the joint model and its analytic gradient.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{add_kron, coreg_matrix, factorize, gram_with_derivatives, latent_outputs};
use crate::error::{Error, Result};
use crate::gp::params::{constrained_jacobian, pack, HyperParameters, ParamLayout, ParamSlot};
use crate::gp::Dataset;

/// Value and gradient of the log marginal likelihood at one parameter point.
#[derive(Debug, Clone)]
pub struct MllEvaluation {
    pub value: f64,
    /// Gradient with respect to constrained parameters, in layout order.
    pub constrained_gradient: Vec<f64>,
    /// Gradient with respect to the unconstrained encoding, in layout order.
    pub gradient: Vec<f64>,
    /// Diagonal jitter the factorization needed.
    pub jitter: f64,
}

fn check(h: &HyperParameters, data: &Dataset) -> Result<usize> {
    h.validate()?;
    let t = latent_outputs(&h.latents)?;
    if data.outputs() != t {
        return Err(Error::DimensionMismatch {
            context: "dataset outputs vs hyperparameters",
            expected: t,
            got: data.outputs(),
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    Ok(t)
}

/// `-½ yᵀ(K̃+Σ)⁻¹y - ½ log|K̃+Σ| - (NT/2) log 2π` on the data as given.
pub fn log_marginal_likelihood(h: &HyperParameters, data: &Dataset) -> Result<f64> {
    check(h, data)?;
    let jc = crate::covariance::joint_covariance(&h.latents, &data.x, &h.noise)?;
    let f = factorize(&jc.noisy)?;
    let y = data.stacked_y();
    let alpha = f.chol.solve(&y);
    Ok(mll_from_parts(&y, &alpha, &f.chol.l()))
}

fn mll_from_parts(y: &DVector<f64>, alpha: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * y.dot(alpha) - 0.5 * logdet - 0.5 * n * (2.0 * PI).ln()
}

/// Gradient of the log marginal likelihood with respect to the unconstrained parameters.
pub fn mll_gradient(h: &HyperParameters, data: &Dataset) -> Result<Vec<f64>> {
    Ok(evaluate(h, data)?.gradient)
}

/// Computes the log marginal likelihood and its full gradient.
///
/// Each partial derivative is `½ tr((ααᵀ - (K̃+Σ)⁻¹) ∂K̃/∂θ)` with `α = (K̃+Σ)⁻¹y`.
pub fn evaluate(h: &HyperParameters, data: &Dataset) -> Result<MllEvaluation> {
    let t = check(h, data)?;
    let n = data.len();
    let layout = ParamLayout::of(h);

    let mut grams = Vec::with_capacity(h.latents.len());
    let mut coregs = Vec::with_capacity(h.latents.len());
    let mut k = DMatrix::zeros(n * t, n * t);
    for l in &h.latents {
        let (kx, dk) = gram_with_derivatives(&l.kernel, &data.x)?;
        let a = coreg_matrix(&l.coreg)?;
        add_kron(&mut k, &a, &kx);
        grams.push((kx, dk));
        coregs.push(a);
    }
    for o in 0..t {
        let e = h.noise.effective(o);
        for i in 0..n {
            k[(o * n + i, o * n + i)] += e;
        }
    }

    let f = factorize(&k)?;
    let y = data.stacked_y();
    let alpha = f.chol.solve(&y);
    let value = mll_from_parts(&y, &alpha, &f.chol.l());
    if !value.is_finite() {
        return Err(Error::NonFinite("log marginal likelihood"));
    }

    // W = ααᵀ - K⁻¹
    let mut w = f.chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);

    let block = |ts: (usize, usize)| w.view((ts.0 * n, ts.1 * n), (n, n));

    let mut grad_c = vec![0.0; layout.len()];
    for (q, ((kx, dk), a)) in grams.iter().zip(&coregs).enumerate() {
        // M[t,s] = <W_ts, K_x>,  G = Σ_ts A_ts W_ts
        let mut m = DMatrix::zeros(t, t);
        let mut g = DMatrix::zeros(n, n);
        for ti in 0..t {
            for si in 0..t {
                let b = block((ti, si));
                m[(ti, si)] = b.dot(kx);
                let ats = a[(ti, si)];
                g.zip_apply(&b, |gv, bv| *gv += ats * bv);
            }
        }
        let ml = &m * &h.latents[q].coreg.factor;
        for (idx, slot) in layout.slots.iter().enumerate() {
            match *slot {
                ParamSlot::Lengthscale { latent } if latent == q => grad_c[idx] = 0.5 * g.dot(&dk[0]),
                ParamSlot::Amplitude { latent } if latent == q => grad_c[idx] = 0.5 * g.dot(&dk[1]),
                ParamSlot::Alpha { latent } if latent == q => grad_c[idx] = 0.5 * g.dot(&dk[2]),
                ParamSlot::Factor { latent, row, col } if latent == q => grad_c[idx] = ml[(row, col)],
                _ => {}
            }
        }
    }
    let traces: Vec<f64> = (0..t).map(|o| block((o, o)).trace()).collect();
    for (idx, slot) in layout.slots.iter().enumerate() {
        match *slot {
            ParamSlot::GlobalNoise => grad_c[idx] = 0.5 * traces.iter().sum::<f64>(),
            ParamSlot::OutputNoise { output } => grad_c[idx] = 0.5 * traces[output],
            _ => {}
        }
    }

    let raw = pack(h, &layout);
    let jac = constrained_jacobian(&layout, &raw);
    let gradient = grad_c.iter().zip(&jac).map(|(g, j)| g * j).collect();
    Ok(MllEvaluation {
        value,
        constrained_gradient: grad_c,
        gradient,
        jitter: f.jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{InputKernelParams, KernelKind, NoiseParams};

    fn point_data(y: &[f64]) -> Dataset {
        let n = y.len();
        // inputs far apart so the gram is ≈ identity scaled by s²
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * 1e3);
        Dataset::new(x, DMatrix::from_column_slice(n, 1, y)).unwrap()
    }

    fn unit_model(amplitude: f64, noise: f64) -> HyperParameters {
        HyperParameters::new(
            InputKernelParams::new(KernelKind::SquaredExponential, 1.0, amplitude),
            1,
            NoiseParams {
                global: 0.0,
                per_output: vec![noise],
            },
        )
    }

    #[test]
    fn hand_values() {
        // K̃ + Σ = [1] with s² = 1 - 1e-9 and tiny noise
        let h = unit_model(0.5, 0.5);
        let v = log_marginal_likelihood(&h, &point_data(&[0.0])).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
        let v = log_marginal_likelihood(&h, &point_data(&[1.0])).unwrap();
        assert!((v + 1.418_938_533_204_672_7).abs() < 1e-12);
        let v = log_marginal_likelihood(&h, &point_data(&[0.0, 0.0])).unwrap();
        assert!((v + 1.837_877_066_409_345_5).abs() < 1e-12);
    }

    #[test]
    fn isotropic_noise_gradient() {
        // K̃+Σ = θ I₂ with y = 0: dlogp/dθ = -n/(2θ) = -1 at θ = 1
        let h = unit_model(0.5, 0.5);
        let e = evaluate(&h, &point_data(&[0.0, 0.0])).unwrap();
        let layout = ParamLayout::of(&h);
        let i_noise = layout.index_of(ParamSlot::OutputNoise { output: 0 }).unwrap();
        let i_amp = layout.index_of(ParamSlot::Amplitude { latent: 0 }).unwrap();
        // the amplitude enters the diagonal exactly like the noise
        assert!((e.constrained_gradient[i_noise] + 1.0).abs() < 1e-12);
        assert!((e.constrained_gradient[i_amp] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_data_is_an_error() {
        let h = unit_model(1.0, 0.1);
        assert!(matches!(log_marginal_likelihood(&h, &Dataset::empty(1, 1)), Err(Error::Empty(_))));
    }
}
