//! Input kernels, coregionalization matrices and the joint multi-output covariance.
//!
//! The joint covariance over `N` inputs and `T` outputs is laid out output-major:
//! row `t * N + i` belongs to output `t` at input `i`, so block `(t, s)` of
//! `Σ_q A_q ⊗ K_x^(q)` is `Σ_q A_q[t, s] · K_x^(q)`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::squared_distance;

/// Family of the stationary input kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// `s² exp(-r² / (2ℓ²))`
    SquaredExponential,
    /// `s² exp(-r² / (4ℓ²))`, the wider variant used for the two-output demo.
    SquaredExponentialWide,
    /// `s² (1 + √5 r/ℓ + 5r²/(3ℓ²)) exp(-√5 r/ℓ)`
    Matern52,
    /// `s² (1 + r²/(2αℓ²))^(-α)`
    RationalQuadratic,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::SquaredExponential,
        KernelKind::SquaredExponentialWide,
        KernelKind::Matern52,
        KernelKind::RationalQuadratic,
    ];

    /// Number of positive scalar parameters (ℓ, s², and α for rational quadratic).
    pub fn num_params(self) -> usize {
        match self {
            KernelKind::RationalQuadratic => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputKernelParams {
    pub kind: KernelKind,
    pub lengthscale: f64,
    pub amplitude: f64,
    /// Shape parameter, only read by [`KernelKind::RationalQuadratic`].
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl InputKernelParams {
    pub fn new(kind: KernelKind, lengthscale: f64, amplitude: f64) -> Self {
        Self {
            kind,
            lengthscale,
            amplitude,
            alpha: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.lengthscale) || !ok(self.amplitude) {
            return Err(Error::invalid(format!(
                "kernel lengthscale and amplitude must be positive (got {}, {})",
                self.lengthscale, self.amplitude
            )));
        }
        if self.kind == KernelKind::RationalQuadratic && !ok(self.alpha) {
            return Err(Error::invalid(format!("rational-quadratic alpha must be positive (got {})", self.alpha)));
        }
        Ok(())
    }

    /// Kernel value as a function of the squared distance.
    pub fn eval_sq(&self, r2: f64) -> f64 {
        let (l, s2) = (self.lengthscale, self.amplitude);
        match self.kind {
            KernelKind::SquaredExponential => s2 * (-r2 / (2.0 * l * l)).exp(),
            KernelKind::SquaredExponentialWide => s2 * (-r2 / (4.0 * l * l)).exp(),
            KernelKind::Matern52 => {
                let u = 5.0f64.sqrt() * r2.sqrt() / l;
                s2 * (1.0 + u + u * u / 3.0) * (-u).exp()
            }
            KernelKind::RationalQuadratic => {
                let b = 1.0 + r2 / (2.0 * self.alpha * l * l);
                s2 * b.powf(-self.alpha)
            }
        }
    }

    /// Partial derivatives with respect to (ℓ, s², [α]) in constrained space.
    pub fn grad_sq(&self, r2: f64) -> [f64; 3] {
        let (l, s2) = (self.lengthscale, self.amplitude);
        let k = self.eval_sq(r2);
        let d_amp = if s2 > 0.0 { k / s2 } else { 0.0 };
        match self.kind {
            KernelKind::SquaredExponential => [k * r2 / (l * l * l), d_amp, 0.0],
            KernelKind::SquaredExponentialWide => [k * r2 / (2.0 * l * l * l), d_amp, 0.0],
            KernelKind::Matern52 => {
                let u = 5.0f64.sqrt() * r2.sqrt() / l;
                [s2 * u * u * (1.0 + u) * (-u).exp() / (3.0 * l), d_amp, 0.0]
            }
            KernelKind::RationalQuadratic => {
                let a = self.alpha;
                let b = 1.0 + r2 / (2.0 * a * l * l);
                let d_l = s2 * b.powf(-a - 1.0) * r2 / (l * l * l);
                let d_a = k * (-b.ln() + (b - 1.0) / b);
                [d_l, d_amp, d_a]
            }
        }
    }
}

/// Lower-triangular factor `L` of one coregionalization matrix `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoregionalizationParams {
    pub factor: DMatrix<f64>,
}

impl CoregionalizationParams {
    pub fn identity(outputs: usize) -> Self {
        Self {
            factor: DMatrix::identity(outputs, outputs),
        }
    }

    pub fn from_factor(factor: DMatrix<f64>) -> Result<Self> {
        let c = Self { factor };
        c.validate()?;
        Ok(c)
    }

    pub fn outputs(&self) -> usize {
        self.factor.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.factor;
        if !l.is_square() || l.nrows() == 0 {
            return Err(Error::invalid("coregionalization factor must be square and non-empty"));
        }
        for i in 0..l.nrows() {
            for j in (i + 1)..l.ncols() {
                if l[(i, j)] != 0.0 {
                    return Err(Error::invalid(format!(
                        "coregionalization factor is not lower triangular: entry ({i},{j}) = {}",
                        l[(i, j)]
                    )));
                }
            }
            if !(l[(i, i)] > 0.0) {
                return Err(Error::invalid(format!("coregionalization factor diagonal ({i},{i}) must be positive")));
            }
        }
        Ok(())
    }
}

/// `A = L Lᵀ`.
pub fn coreg_matrix(c: &CoregionalizationParams) -> Result<DMatrix<f64>> {
    c.validate()?;
    Ok(&c.factor * c.factor.transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub global: f64,
    pub per_output: Vec<f64>,
}

impl NoiseParams {
    pub fn zero(outputs: usize) -> Self {
        Self {
            global: 0.0,
            per_output: vec![0.0; outputs],
        }
    }

    /// `σ_g² + σ_t²`.
    pub fn effective(&self, output: usize) -> f64 {
        self.global + self.per_output[output]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.global >= 0.0) || self.per_output.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("noise variances must be non-negative"));
        }
        Ok(())
    }
}

/// One latent process of the linear model of coregionalization: a kernel and its mixing factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentProcess {
    pub kernel: InputKernelParams,
    pub coreg: CoregionalizationParams,
}

#[derive(Debug, Clone)]
pub struct JointCovariance {
    /// `Σ_q A_q ⊗ K_x^(q)`
    pub signal: DMatrix<f64>,
    /// `signal + Σ`
    pub noisy: DMatrix<f64>,
    pub points: usize,
    pub outputs: usize,
}

impl JointCovariance {
    pub fn block(&self, t: usize, s: usize) -> DMatrix<f64> {
        let n = self.points;
        self.signal.view((t * n, s * n), (n, n)).into_owned()
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn kernel_eval(p: &InputKernelParams, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel_eval",
            expected: x.len(),
            got: x2.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("kernel input"));
    }
    check_finite(x, "kernel input")?;
    check_finite(x2, "kernel input")?;
    Ok(p.eval_sq(squared_distance(x, x2)))
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// Pairwise squared distances between the rows of `a` and `b`.
pub fn squared_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ra: Vec<Vec<f64>> = (0..a.nrows()).map(|i| row(a, i)).collect();
    let rb: Vec<Vec<f64>> = (0..b.nrows()).map(|i| row(b, i)).collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| squared_distance(&ra[i], &rb[j]))
}

pub fn gram_matrix(p: &InputKernelParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Empty("gram_matrix inputs"));
    }
    check_finite(x.as_slice(), "gram_matrix inputs")?;
    let d2 = squared_distances(x, x);
    let mut k = d2.map(|r2| p.eval_sq(r2));
    // exact symmetry
    for i in 0..k.nrows() {
        for j in 0..i {
            k[(i, j)] = k[(j, i)];
        }
    }
    check_finite(k.as_slice(), "gram_matrix")?;
    Ok(k)
}

/// Cross-covariance `k(xᵢ, qⱼ)` between training rows `x` and query rows `q`.
pub fn cross_gram(p: &InputKernelParams, x: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != q.ncols() {
        return Err(Error::DimensionMismatch {
            context: "cross_gram",
            expected: x.ncols(),
            got: q.ncols(),
        });
    }
    let k = squared_distances(x, q).map(|r2| p.eval_sq(r2));
    check_finite(k.as_slice(), "cross_gram")?;
    Ok(k)
}

/// Gram matrix together with its derivative with respect to each kernel parameter.
pub fn gram_with_derivatives(p: &InputKernelParams, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let k = gram_matrix(p, x)?;
    let d2 = squared_distances(x, x);
    let n = x.nrows();
    let np = p.kind.num_params();
    let mut derivs = vec![DMatrix::zeros(n, n); np];
    for j in 0..n {
        for i in j..n {
            let g = p.grad_sq(d2[(i, j)]);
            for (m, d) in derivs.iter_mut().enumerate() {
                d[(i, j)] = g[m];
                d[(j, i)] = g[m];
            }
        }
    }
    Ok((k, derivs))
}

/// Checks that all latents agree on the number of outputs and returns it.
pub fn latent_outputs(latents: &[LatentProcess]) -> Result<usize> {
    let first = latents.first().ok_or(Error::Empty("latent processes"))?;
    let t = first.coreg.outputs();
    for l in latents {
        if l.coreg.outputs() != t {
            return Err(Error::DimensionMismatch {
                context: "latent coregionalization size",
                expected: t,
                got: l.coreg.outputs(),
            });
        }
    }
    Ok(t)
}

/// Adds `a ⊗ kx` into `target` (output-major layout).
pub(crate) fn add_kron(target: &mut DMatrix<f64>, a: &DMatrix<f64>, kx: &DMatrix<f64>) {
    let (n, m) = kx.shape();
    for t in 0..a.nrows() {
        for s in 0..a.ncols() {
            let ats = a[(t, s)];
            if ats == 0.0 {
                continue;
            }
            let mut blk = target.view_mut((t * n, s * m), (n, m));
            blk.zip_apply(kx, |b, k| *b += ats * k);
        }
    }
}

pub fn joint_covariance(latents: &[LatentProcess], x: &DMatrix<f64>, noise: &NoiseParams) -> Result<JointCovariance> {
    let t = latent_outputs(latents)?;
    if noise.per_output.len() != t {
        return Err(Error::DimensionMismatch {
            context: "noise per-output length",
            expected: t,
            got: noise.per_output.len(),
        });
    }
    noise.validate()?;
    let n = x.nrows();
    let mut signal = DMatrix::zeros(n * t, n * t);
    for l in latents {
        l.kernel.validate()?;
        let kx = gram_matrix(&l.kernel, x)?;
        let a = coreg_matrix(&l.coreg)?;
        add_kron(&mut signal, &a, &kx);
    }
    let mut noisy = signal.clone();
    for o in 0..t {
        let e = noise.effective(o);
        for i in 0..n {
            noisy[(o * n + i, o * n + i)] += e;
        }
    }
    Ok(JointCovariance {
        signal,
        noisy,
        points: n,
        outputs: t,
    })
}

/// Base jitter and the number of escalations tried after the first failure.
pub const JITTER_BASE: f64 = 1e-8;
pub const JITTER_ESCALATIONS: usize = 3;

/// Cholesky factor of a covariance and the diagonal jitter that was needed.
pub struct Factorization {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Cholesky with the jitter ladder `0, 1e-8, 1e-7, 1e-6`; a fourth failure is an error.
pub fn factorize(matrix: &DMatrix<f64>) -> Result<Factorization> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance matrix"));
    }
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(Factorization { chol, jitter: 0.0 });
    }
    let mut jitter = JITTER_BASE;
    for step in 0..JITTER_ESCALATIONS {
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(Factorization { chol, jitter });
        }
        if step + 1 < JITTER_ESCALATIONS {
            jitter *= 10.0;
        }
    }
    let diag = matrix.diagonal();
    Err(Error::NotPositiveDefinite {
        attempts: JITTER_ESCALATIONS + 1,
        size: matrix.nrows(),
        min_diag: diag.min(),
        max_diag: diag.max(),
        last_jitter: jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
        }
    }

    fn se(l: f64, s2: f64) -> InputKernelParams {
        InputKernelParams::new(KernelKind::SquaredExponential, l, s2)
    }

    #[test]
    fn zero_distance_returns_amplitude() {
        for kind in KernelKind::ALL {
            let p = InputKernelParams::new(kind, 0.7, 2.0);
            assert_eq!(kernel_eval(&p, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 2.0);
        }
    }

    #[test]
    fn unit_distance_se() {
        let v = kernel_eval(&se(1.0, 1.0), &[0.0], &[1.0]).unwrap();
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn kernel_errors() {
        let p = se(1.0, 1.0);
        assert!(matches!(kernel_eval(&p, &[0.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(kernel_eval(&p, &[f64::NAN], &[1.0]), Err(Error::NonFinite(_))));
        assert!(matches!(gram_matrix(&p, &DMatrix::zeros(0, 2)), Err(Error::Empty(_))));
    }

    #[test]
    fn gram_single_point_and_duplicates() {
        let p = se(0.5, 1.7);
        let k = gram_matrix(&p, &DMatrix::from_row_slice(1, 2, &[0.1, 0.2])).unwrap();
        assert_eq!(k, DMatrix::from_element(1, 1, 1.7));
        let x = DMatrix::from_row_slice(2, 1, &[0.4, 0.4]);
        let k = gram_matrix(&p, &x).unwrap();
        assert!(k.iter().all(|v| *v == 1.7));
    }

    #[test]
    fn coreg_examples() {
        let a = coreg_matrix(&CoregionalizationParams::identity(3)).unwrap();
        assert_eq!(a, DMatrix::identity(3, 3));
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        let a = coreg_matrix(&CoregionalizationParams { factor: l }).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.25]);
        assert!((a - want).abs().max() < 1e-15);
    }

    #[test]
    fn coreg_rejects_upper_entries() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        assert!(coreg_matrix(&CoregionalizationParams { factor: l }).is_err());
    }

    #[test]
    fn hand_kronecker() {
        // A = diag(2, 3) via L = diag(√2, √3); K_x = [[1, .5], [.5, 1]]
        let l = DMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 0.0, 0.0, 3f64.sqrt()]);
        let r = (-(0.5f64.ln()) * 2.0).sqrt(); // distance with exp(-r²/2) = 0.5
        let x = DMatrix::from_row_slice(2, 1, &[0.0, r]);
        let latents = [LatentProcess {
            kernel: se(1.0, 1.0),
            coreg: CoregionalizationParams { factor: l },
        }];
        let jc = joint_covariance(&latents, &x, &NoiseParams::zero(2)).unwrap();
        let b00 = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let b11 = DMatrix::from_row_slice(2, 2, &[3.0, 1.5, 1.5, 3.0]);
        assert!((jc.block(0, 0) - b00).abs().max() < 1e-12);
        assert!((jc.block(1, 1) - b11).abs().max() < 1e-12);
        assert!(jc.block(0, 1).abs().max() < 1e-15);
        assert!(jc.block(1, 0).abs().max() < 1e-15);
    }

    #[test]
    fn noise_added_per_output() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let latents = [LatentProcess {
            kernel: se(1.0, 1.0),
            coreg: CoregionalizationParams::identity(2),
        }];
        let noise = NoiseParams {
            global: 0.1,
            per_output: vec![0.2, 0.5],
        };
        let jc = joint_covariance(&latents, &x, &noise).unwrap();
        assert!(close(jc.noisy[(0, 0)] - jc.signal[(0, 0)], 0.3, 1e-14));
        assert!(close(jc.noisy[(4, 4)] - jc.signal[(4, 4)], 0.6, 1e-14));
        assert_eq!(jc.noisy[(0, 1)], jc.signal[(0, 1)]);
    }

    #[test]
    fn jitter_rescues_singular_gram() {
        let x = DMatrix::from_row_slice(3, 1, &[0.5, 0.5, 0.5]);
        let k = gram_matrix(&se(1.0, 1.0), &x).unwrap();
        let f = factorize(&k).unwrap();
        assert!(f.jitter > 0.0);
    }

    #[test]
    fn indefinite_matrix_is_an_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match factorize(&m) {
            Err(Error::NotPositiveDefinite { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("expected failure, got {:?}", other.map(|f| f.jitter)),
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let r2s = [0.0, 0.04, 0.9, 3.3];
        for kind in KernelKind::ALL {
            let mut p = InputKernelParams::new(kind, 0.8, 1.3);
            p.alpha = 2.2;
            for &r2 in &r2s {
                let g = p.grad_sq(r2);
                let h = 1e-6;
                let fd = |f: &dyn Fn(&mut InputKernelParams, f64)| {
                    let mut a = p.clone();
                    let mut b = p.clone();
                    f(&mut a, h);
                    f(&mut b, -h);
                    (a.eval_sq(r2) - b.eval_sq(r2)) / (2.0 * h)
                };
                assert!(close(g[0], fd(&|q, d| q.lengthscale += d), 1e-7), "{kind:?} d/dl");
                assert!(close(g[1], fd(&|q, d| q.amplitude += d), 1e-7), "{kind:?} d/ds2");
                if kind == KernelKind::RationalQuadratic {
                    assert!(close(g[2], fd(&|q, d| q.alpha += d), 1e-7), "{kind:?} d/dalpha");
                }
            }
        }
    }
}
