//! Hyperparameters and their unconstrained vector encoding.
//!
//! Positive quantities (lengthscales, amplitudes, α, noise variances and the
//! diagonal of each coregionalization factor) are stored through softplus;
//! strictly-lower factor entries are stored as-is.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    coreg_matrix, latent_outputs, CoregionalizationParams, InputKernelParams, KernelKind, LatentProcess, NoiseParams,
};
use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::math::{euclidean, inv_softplus, median, sigmoid, softplus};

/// Smallest value a positive parameter may take when re-encoded.
const POSITIVE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParameters {
    pub latents: Vec<LatentProcess>,
    pub noise: NoiseParams,
}

impl HyperParameters {
    /// Single latent process with identity coregionalization.
    pub fn new(kernel: InputKernelParams, outputs: usize, noise: NoiseParams) -> Self {
        Self {
            latents: vec![LatentProcess {
                kernel,
                coreg: CoregionalizationParams::identity(outputs),
            }],
            noise,
        }
    }

    pub fn outputs(&self) -> usize {
        self.noise.per_output.len()
    }

    pub fn num_latent(&self) -> usize {
        self.latents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = latent_outputs(&self.latents)?;
        if t != self.noise.per_output.len() {
            return Err(Error::DimensionMismatch {
                context: "hyperparameter outputs",
                expected: t,
                got: self.noise.per_output.len(),
            });
        }
        for l in &self.latents {
            l.kernel.validate()?;
            l.coreg.validate()?;
        }
        self.noise.validate()
    }

    /// `Σ_q A_q[t, t]`, the signal variance attributed to output `t`.
    pub fn coreg_diagonal(&self, t: usize) -> f64 {
        self.latents
            .iter()
            .map(|l| l.coreg.factor.row(t).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn coreg_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        self.latents.iter().map(|l| coreg_matrix(&l.coreg)).collect()
    }

    /// Default starting point for standardized data.
    ///
    /// ℓ is the median pairwise input distance, s² and the factor scale come from
    /// the per-output variance, σ_t² = 0.01·variance and σ_g² = 1e-4.
    pub fn initial(data: &Dataset, kind: KernelKind, num_latent: usize) -> Result<Self> {
        if num_latent == 0 {
            return Err(Error::invalid("num_latent must be at least 1"));
        }
        let t = data.outputs();
        let n = data.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| data.x.row(i).iter().copied().collect()).collect();
        let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                dists.push(euclidean(&rows[i], &rows[j]));
            }
        }
        let lengthscale = median(&dists).filter(|v| *v > 0.0).unwrap_or(1.0);
        let vars: Vec<f64> = (0..t)
            .map(|o| {
                let col: Vec<f64> = data.y.column(o).iter().copied().collect();
                let v = crate::math::std_dev(&col).powi(2);
                if v > 0.0 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        let amplitude = if t == 1 { vars[0] } else { 1.0 };
        let latents = (0..num_latent)
            .map(|q| {
                let mut factor = DMatrix::zeros(t, t);
                for o in 0..t {
                    // split the variance across latents so Σ_q A_q[t,t] = var_t
                    let scale = if t == 1 { 1.0 } else { vars[o].sqrt() };
                    factor[(o, o)] = scale / (num_latent as f64).sqrt();
                }
                let kernel = InputKernelParams::new(kind, lengthscale * (1.0 + q as f64 * 0.5), amplitude);
                LatentProcess {
                    kernel,
                    coreg: CoregionalizationParams { factor },
                }
            })
            .collect();
        Ok(Self {
            latents,
            noise: NoiseParams {
                global: 1e-4,
                per_output: vars.iter().map(|v| 0.01 * v).collect(),
            },
        })
    }
}

/// What a slot of the unconstrained vector encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Lengthscale { latent: usize },
    Amplitude { latent: usize },
    Alpha { latent: usize },
    /// Entry `(row, col)` of factor `L_q`, `row >= col`.
    Factor { latent: usize, row: usize, col: usize },
    GlobalNoise,
    OutputNoise { output: usize },
}

impl ParamSlot {
    pub fn is_positive(self) -> bool {
        match self {
            ParamSlot::Factor { row, col, .. } => row == col,
            _ => true,
        }
    }

    pub fn name(self) -> String {
        match self {
            ParamSlot::Lengthscale { latent } => format!("latent{latent}.lengthscale"),
            ParamSlot::Amplitude { latent } => format!("latent{latent}.amplitude"),
            ParamSlot::Alpha { latent } => format!("latent{latent}.alpha"),
            ParamSlot::Factor { latent, row, col } => format!("latent{latent}.factor[{row},{col}]"),
            ParamSlot::GlobalNoise => "noise.global".into(),
            ParamSlot::OutputNoise { output } => format!("noise.output{output}"),
        }
    }
}

/// Which parameter families are held fixed during training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedParams {
    pub lengthscale: bool,
    pub amplitude: bool,
    pub alpha: bool,
    pub coreg: bool,
    pub global_noise: bool,
    pub output_noise: bool,
}

impl FixedParams {
    pub fn is_fixed(&self, slot: ParamSlot) -> bool {
        match slot {
            ParamSlot::Lengthscale { .. } => self.lengthscale,
            ParamSlot::Amplitude { .. } => self.amplitude,
            ParamSlot::Alpha { .. } => self.alpha,
            ParamSlot::Factor { .. } => self.coreg,
            ParamSlot::GlobalNoise => self.global_noise,
            ParamSlot::OutputNoise { .. } => self.output_noise,
        }
    }

    /// Multi-output models keep s² at 1 because A carries the signal variances;
    /// single-output models keep A = [1] and learn s².
    pub fn for_outputs(outputs: usize) -> Self {
        if outputs == 1 {
            Self {
                coreg: true,
                ..Self::default()
            }
        } else {
            Self {
                amplitude: true,
                ..Self::default()
            }
        }
    }
}

/// Ordered description of the unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub slots: Vec<ParamSlot>,
}

impl ParamLayout {
    pub fn of(h: &HyperParameters) -> Self {
        let t = h.outputs();
        let mut slots = Vec::new();
        for (q, l) in h.latents.iter().enumerate() {
            slots.push(ParamSlot::Lengthscale { latent: q });
            slots.push(ParamSlot::Amplitude { latent: q });
            if l.kernel.kind == KernelKind::RationalQuadratic {
                slots.push(ParamSlot::Alpha { latent: q });
            }
            for row in 0..t {
                for col in 0..=row {
                    slots.push(ParamSlot::Factor { latent: q, row, col });
                }
            }
        }
        slots.push(ParamSlot::GlobalNoise);
        for output in 0..t {
            slots.push(ParamSlot::OutputNoise { output });
        }
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn index_of(&self, slot: ParamSlot) -> Option<usize> {
        self.slots.iter().position(|s| *s == slot)
    }

    pub fn trainable_mask(&self, fixed: &FixedParams) -> Vec<bool> {
        self.slots.iter().map(|s| !fixed.is_fixed(*s)).collect()
    }
}

fn constrained_value(h: &HyperParameters, slot: ParamSlot) -> f64 {
    match slot {
        ParamSlot::Lengthscale { latent } => h.latents[latent].kernel.lengthscale,
        ParamSlot::Amplitude { latent } => h.latents[latent].kernel.amplitude,
        ParamSlot::Alpha { latent } => h.latents[latent].kernel.alpha,
        ParamSlot::Factor { latent, row, col } => h.latents[latent].coreg.factor[(row, col)],
        ParamSlot::GlobalNoise => h.noise.global,
        ParamSlot::OutputNoise { output } => h.noise.per_output[output],
    }
}

fn set_constrained(h: &mut HyperParameters, slot: ParamSlot, v: f64) {
    match slot {
        ParamSlot::Lengthscale { latent } => h.latents[latent].kernel.lengthscale = v,
        ParamSlot::Amplitude { latent } => h.latents[latent].kernel.amplitude = v,
        ParamSlot::Alpha { latent } => h.latents[latent].kernel.alpha = v,
        ParamSlot::Factor { latent, row, col } => h.latents[latent].coreg.factor[(row, col)] = v,
        ParamSlot::GlobalNoise => h.noise.global = v,
        ParamSlot::OutputNoise { output } => h.noise.per_output[output] = v,
    }
}

/// Encodes `h` as an unconstrained vector following `layout`.
pub fn pack(h: &HyperParameters, layout: &ParamLayout) -> Vec<f64> {
    layout
        .slots
        .iter()
        .map(|&s| {
            let v = constrained_value(h, s);
            if s.is_positive() {
                inv_softplus(v.max(POSITIVE_FLOOR))
            } else {
                v
            }
        })
        .collect()
}

/// Decodes an unconstrained vector into `template`'s structure.
pub fn unpack(template: &HyperParameters, layout: &ParamLayout, raw: &[f64]) -> HyperParameters {
    let mut h = template.clone();
    for (&s, &r) in layout.slots.iter().zip(raw) {
        let v = if s.is_positive() { softplus(r) } else { r };
        set_constrained(&mut h, s, v);
    }
    h
}

/// `d constrained / d raw` at each slot, used for chaining gradients.
pub fn constrained_jacobian(layout: &ParamLayout, raw: &[f64]) -> Vec<f64> {
    layout
        .slots
        .iter()
        .zip(raw)
        .map(|(s, r)| if s.is_positive() { sigmoid(*r) } else { 1.0 })
        .collect()
}
