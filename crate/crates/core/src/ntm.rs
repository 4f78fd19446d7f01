//! Adaptive pairwise regularization of output-specific parameters.
//!
//! Every output-specific parameter family (for example the per-output noise
//! variances) forms a group `θ_k = [θ_k1, …, θ_kT]`. Each unordered pair `(i, j)`
//! of a group contributes `w · ‖θ_ki − θ_kj‖²` to the training loss. After every
//! step the weights of a group are rescaled by `G · softmax(−λ · rel)` where `rel`
//! is each pair's share of the group's total inconsistency and `G` the number of
//! pairs. The penalty stays off for the first iterations, and at every multiple
//! of the freeze interval the smallest active weight is pinned to a tiny value
//! so the coupling is released one pair at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::params::{constrained_jacobian, HyperParameters, ParamLayout, ParamSlot};
use crate::math::{inv_softplus, sigmoid};
use crate::gp::{optimize, Dataset, HeldOut, Penalty, TrainConfig, TrainOutcome};

/// A family of output-specific parameters, one member per output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    /// σ_t²
    PerOutputNoise,
    /// `Σ_q A_q[t, t]`
    CoregDiagonal,
}

impl GroupKind {
    pub fn name(self) -> &'static str {
        match self {
            GroupKind::PerOutputNoise => "per-output-noise",
            GroupKind::CoregDiagonal => "coreg-diagonal",
        }
    }

    /// Constrained-space value of member `t`.
    pub fn value(self, h: &HyperParameters, t: usize) -> f64 {
        match self {
            GroupKind::PerOutputNoise => h.noise.per_output[t],
            GroupKind::CoregDiagonal => h.coreg_diagonal(t),
        }
    }

    /// Sparse gradient of member `t` with respect to the unconstrained vector.
    fn raw_gradient(self, h: &HyperParameters, layout: &ParamLayout, jac: &[f64], t: usize) -> Vec<(usize, f64)> {
        layout
            .slots
            .iter()
            .enumerate()
            .filter_map(|(idx, slot)| match (self, *slot) {
                (GroupKind::PerOutputNoise, ParamSlot::OutputNoise { output }) if output == t => Some((idx, jac[idx])),
                (GroupKind::CoregDiagonal, ParamSlot::Factor { latent, row, col }) if row == t => {
                    Some((idx, 2.0 * h.latents[latent].coreg.factor[(row, col)] * jac[idx]))
                }
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterGroup {
    pub kind: GroupKind,
    pub size: usize,
}

impl ParameterGroup {
    pub fn values(&self, h: &HyperParameters) -> Vec<f64> {
        (0..self.size).map(|t| self.kind.value(h, t)).collect()
    }
}

/// Output pair `(i, j)`, `i < j`, within one group. Ordering is lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub group: GroupKind,
    pub i: usize,
    pub j: usize,
}

/// All unordered pairs of every group, in lexicographic order.
///
/// Groups with fewer than two members contribute nothing.
pub fn enumerate_pairs(groups: &[ParameterGroup]) -> Vec<PairKey> {
    let mut keys = Vec::new();
    for g in groups {
        if g.size < 2 {
            log::warn!("group {} has {} member(s); no pairs to regularize", g.kind.name(), g.size);
            continue;
        }
        for i in 0..g.size {
            for j in (i + 1)..g.size {
                keys.push(PairKey { group: g.kind, i, j });
            }
        }
    }
    keys.sort();
    keys.dedup();
    keys
}

/// `‖a − b‖₂²`, or the unsquared norm when `squared` is false.
pub fn pair_inconsistency(a: &[f64], b: &[f64], squared: bool) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "pair_inconsistency",
            expected: a.len(),
            got: b.len(),
        });
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(if squared { sq } else { sq.sqrt() })
}

/// `Δ[key] / (Σ_{keys in group} Δ + ε)` for the keys of `group`.
pub fn relative_inconsistency(
    deltas: &BTreeMap<PairKey, f64>,
    group: GroupKind,
    epsilon: f64,
) -> BTreeMap<PairKey, f64> {
    let total: f64 = deltas.iter().filter(|(k, _)| k.group == group).map(|(_, d)| d).sum();
    deltas
        .iter()
        .filter(|(k, _)| k.group == group)
        .map(|(k, d)| (*k, d / (total + epsilon)))
        .collect()
}

/// Where pair inconsistencies are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonSpace {
    /// Positive parameter values.
    Constrained,
    /// `softplus⁻¹` of the values, i.e. the optimizer's own coordinates.
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    pub lambda: f64,
    /// Freeze cadence; `None` disables freezing.
    pub interval: Option<usize>,
    pub start_iteration: usize,
    pub freeze_value: f64,
    pub epsilon: f64,
    pub initial_weight: f64,
    pub groups: Vec<GroupKind>,
    /// Use `‖·‖²` (default) or the plain norm for Δ.
    pub squared: bool,
    pub space: ComparisonSpace,
    /// Weight history cadence for the exported trajectory.
    pub record_every: usize,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            interval: Some(50),
            start_iteration: 30,
            freeze_value: 1e-5,
            epsilon: 1e-5,
            initial_weight: 1.0,
            groups: vec![GroupKind::PerOutputNoise, GroupKind::CoregDiagonal],
            squared: true,
            space: ComparisonSpace::Constrained,
            record_every: 2,
        }
    }
}

impl RegularizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.initial_weight >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("lambda and initial_weight must be ≥ 0 and epsilon > 0".into()));
        }
        if self.interval == Some(0) {
            return Err(Error::Config("freeze interval must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("regularization record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the exported weight trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub iteration: usize,
    pub key: PairKey,
    pub weight: f64,
    pub delta: f64,
    pub rel: f64,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationState {
    pub config: RegularizationConfig,
    pub groups: Vec<ParameterGroup>,
    pub weights: BTreeMap<PairKey, f64>,
    pub frozen: BTreeSet<PairKey>,
    /// Completed optimization iterations.
    pub iteration: usize,
    pub last_delta: BTreeMap<PairKey, f64>,
    pub last_rel: BTreeMap<PairKey, f64>,
    pub history: Vec<WeightRecord>,
    /// Iterations at which a key was frozen.
    pub freeze_events: Vec<(usize, PairKey)>,
}

impl RegularizationState {
    pub fn new(config: RegularizationConfig, outputs: usize) -> Result<Self> {
        config.validate()?;
        let groups: Vec<ParameterGroup> = config
            .groups
            .iter()
            .map(|&kind| ParameterGroup { kind, size: outputs })
            .collect();
        let weights = enumerate_pairs(&groups)
            .into_iter()
            .map(|k| (k, config.initial_weight))
            .collect();
        Ok(Self {
            config,
            groups,
            weights,
            frozen: BTreeSet::new(),
            iteration: 0,
            last_delta: BTreeMap::new(),
            last_rel: BTreeMap::new(),
            history: Vec::new(),
            freeze_events: Vec::new(),
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &PairKey> {
        self.weights.keys()
    }

    /// Whether the penalty applies at (1-based) iteration `iteration`.
    pub fn is_active(&self, iteration: usize) -> bool {
        iteration >= self.config.start_iteration
    }

    fn member_values(&self, g: &ParameterGroup, h: &HyperParameters) -> Vec<f64> {
        let v = g.values(h);
        match self.config.space {
            ComparisonSpace::Constrained => v,
            ComparisonSpace::Unconstrained => v.into_iter().map(inv_softplus).collect(),
        }
    }

    pub fn deltas(&self, h: &HyperParameters) -> BTreeMap<PairKey, f64> {
        let values: BTreeMap<GroupKind, Vec<f64>> =
            self.groups.iter().map(|g| (g.kind, self.member_values(g, h))).collect();
        self.weights
            .keys()
            .map(|k| {
                let v = &values[&k.group];
                let d = pair_inconsistency(&[v[k.i]], &[v[k.j]], self.config.squared).unwrap_or(0.0);
                (*k, d)
            })
            .collect()
    }

    pub fn relative(&self, deltas: &BTreeMap<PairKey, f64>) -> BTreeMap<PairKey, f64> {
        let mut rel = BTreeMap::new();
        for g in &self.groups {
            rel.extend(relative_inconsistency(deltas, g.kind, self.config.epsilon));
        }
        rel
    }

    /// Rescales each group's active weights by `G · softmax(−λ · rel)` over the `G` active keys.
    ///
    /// Frozen keys keep their value, so a group whose active weights are equal keeps its active sum.
    pub fn update_weights(&mut self, rel: &BTreeMap<PairKey, f64>) {
        let lambda = self.config.lambda;
        for g in &self.groups {
            let keys: Vec<PairKey> = self
                .weights
                .keys()
                .filter(|k| k.group == g.kind && !self.frozen.contains(k))
                .copied()
                .collect();
            if keys.is_empty() {
                continue;
            }
            let logits: Vec<f64> = keys.iter().map(|k| -lambda * rel.get(k).copied().unwrap_or(0.0)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let count = keys.len() as f64;
            for (k, e) in keys.iter().zip(&exps) {
                let w = self.weights.get_mut(k).expect("key present");
                *w *= count * e / z;
            }
        }
    }

    /// Active key with the smallest weight, ties broken by key order.
    pub fn smallest_active(&self) -> Option<PairKey> {
        let mut best: Option<(PairKey, f64)> = None;
        for (k, w) in &self.weights {
            if self.frozen.contains(k) {
                continue;
            }
            if best.is_none_or(|(_, bw)| *w < bw) {
                best = Some((*k, *w));
            }
        }
        best.map(|(k, _)| k)
    }

    pub fn freeze_due(&self, iteration: usize) -> bool {
        match self.config.interval {
            Some(interval) => iteration > 0 && iteration.is_multiple_of(interval) && self.is_active(iteration),
            None => false,
        }
    }

    /// Freezes the smallest active weight if a freeze event is due at `iteration`.
    pub fn freeze_smallest(&mut self, iteration: usize) -> Option<PairKey> {
        if !self.freeze_due(iteration) {
            return None;
        }
        let key = self.smallest_active()?;
        self.weights.insert(key, self.config.freeze_value);
        self.frozen.insert(key);
        self.freeze_events.push((iteration, key));
        Some(key)
    }

    /// Penalty value and raw-space gradient at (1-based) iteration `iteration`.
    pub fn penalty(
        &self,
        iteration: usize,
        h: &HyperParameters,
        layout: &ParamLayout,
        raw: &[f64],
        deltas: &BTreeMap<PairKey, f64>,
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; layout.len()];
        if !self.is_active(iteration) {
            return (0.0, grad);
        }
        let loss = regularization_loss(self, deltas);
        let jac = constrained_jacobian(layout, raw);
        for g in &self.groups {
            let values = self.member_values(g, h);
            let member_grads: Vec<Vec<(usize, f64)>> = (0..g.size)
                .map(|t| {
                    let mut d = g.kind.raw_gradient(h, layout, &jac, t);
                    if self.config.space == ComparisonSpace::Unconstrained {
                        let chain = 1.0 / sigmoid(values[t]);
                        d.iter_mut().for_each(|(_, v)| *v *= chain);
                    }
                    d
                })
                .collect();
            for (k, w) in self.weights.iter().filter(|(k, _)| k.group == g.kind) {
                let diff = values[k.i] - values[k.j];
                let d_diff = if self.config.squared {
                    2.0 * diff
                } else if diff == 0.0 {
                    0.0
                } else {
                    diff.signum()
                };
                let c = w * d_diff;
                for &(idx, d) in &member_grads[k.i] {
                    grad[idx] += c * d;
                }
                for &(idx, d) in &member_grads[k.j] {
                    grad[idx] -= c * d;
                }
            }
        }
        (loss, grad)
    }

    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "groupName", "i", "j", "weight", "delta", "relDiff", "frozenFlag"])?;
        for r in &self.history {
            w.write_record(&[
                r.iteration.to_string(),
                r.key.group.name().to_string(),
                (r.key.i + 1).to_string(),
                (r.key.j + 1).to_string(),
                format!("{:?}", r.weight),
                format!("{:?}", r.delta),
                format!("{:?}", r.rel),
                u8::from(r.frozen).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_history_csv(&self, path: &Path) -> Result<()> {
        self.write_history_csv(std::fs::File::create(path)?)
    }
}

/// `Σ_key w[key] · Δ[key]`, ignoring the activation schedule.
pub fn regularization_loss(state: &RegularizationState, deltas: &BTreeMap<PairKey, f64>) -> f64 {
    state
        .weights
        .iter()
        .map(|(k, w)| w * deltas.get(k).copied().unwrap_or(0.0))
        .sum()
}

/// Same, but zero before the start iteration.
pub fn regularization_loss_at(state: &RegularizationState, deltas: &BTreeMap<PairKey, f64>, iteration: usize) -> f64 {
    if state.is_active(iteration) {
        regularization_loss(state, deltas)
    } else {
        0.0
    }
}

/// Functional form of [`RegularizationState::update_weights`].
pub fn update_weights(state: &RegularizationState, rel: &BTreeMap<PairKey, f64>) -> RegularizationState {
    let mut next = state.clone();
    next.update_weights(rel);
    next
}

/// Functional form of [`RegularizationState::freeze_smallest`].
pub fn freeze_smallest(state: &RegularizationState, iteration: usize) -> RegularizationState {
    let mut next = state.clone();
    next.freeze_smallest(iteration);
    next
}

impl Penalty for RegularizationState {
    fn evaluate(&mut self, h: &HyperParameters, layout: &ParamLayout, raw: &[f64]) -> Result<(f64, Vec<f64>)> {
        let it = self.iteration + 1;
        let deltas = self.deltas(h);
        let rel = self.relative(&deltas);
        let out = self.penalty(it, h, layout, raw, &deltas);
        self.last_delta = deltas;
        self.last_rel = rel;
        Ok(out)
    }

    fn after_step(&mut self) {
        let it = self.iteration + 1;
        if self.is_active(it) {
            let rel = std::mem::take(&mut self.last_rel);
            self.update_weights(&rel);
            self.last_rel = rel;
            self.freeze_smallest(it);
        }
        if it.is_multiple_of(self.config.record_every) {
            for (k, w) in &self.weights {
                self.history.push(WeightRecord {
                    iteration: it,
                    key: *k,
                    weight: *w,
                    delta: self.last_delta.get(k).copied().unwrap_or(0.0),
                    rel: self.last_rel.get(k).copied().unwrap_or(0.0),
                    frozen: self.frozen.contains(k),
                });
            }
        }
        self.iteration = it;
    }
}

/// Full adaptive-regularization training loop on `data` as given.
pub fn train_with_ntm(
    h0: &HyperParameters,
    data: &Dataset,
    cfg: &TrainConfig,
    reg: &mut RegularizationState,
    held_out: Option<&HeldOut<'_>>,
) -> Result<TrainOutcome> {
    optimize(h0, data, cfg, Some(reg), held_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(outputs: usize) -> RegularizationState {
        RegularizationState::new(
            RegularizationConfig {
                groups: vec![GroupKind::PerOutputNoise],
                ..RegularizationConfig::default()
            },
            outputs,
        )
        .unwrap()
    }

    fn key(i: usize, j: usize) -> PairKey {
        PairKey {
            group: GroupKind::PerOutputNoise,
            i,
            j,
        }
    }

    #[test]
    fn pair_counts() {
        let g = |size| ParameterGroup {
            kind: GroupKind::PerOutputNoise,
            size,
        };
        assert_eq!(enumerate_pairs(&[g(2)]).len(), 1);
        assert_eq!(enumerate_pairs(&[g(3)]).len(), 3);
        assert_eq!(enumerate_pairs(&[g(1)]).len(), 0);
        let two = [
            g(4),
            ParameterGroup {
                kind: GroupKind::CoregDiagonal,
                size: 4,
            },
        ];
        let keys = enumerate_pairs(&two);
        assert_eq!(keys.len(), 12);
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn inconsistency_examples() {
        assert_eq!(pair_inconsistency(&[0.7], &[0.7], true).unwrap(), 0.0);
        assert_eq!(pair_inconsistency(&[1.5], &[1.0], true).unwrap(), 0.25);
        assert_eq!(pair_inconsistency(&[1.0, 2.0], &[2.0, 4.0], true).unwrap(), 5.0);
        assert!((pair_inconsistency(&[1.0, 2.0], &[2.0, 4.0], false).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!(pair_inconsistency(&[1.0], &[1.0, 2.0], true).is_err());
    }

    #[test]
    fn relative_examples() {
        let d: BTreeMap<_, _> = [(key(0, 1), 2.0), (key(0, 2), 3.0), (key(1, 2), 5.0)].into();
        let r = relative_inconsistency(&d, GroupKind::PerOutputNoise, 1e-5);
        let denom = 10.0 + 1e-5;
        assert!((r[&key(0, 1)] - 2.0 / denom).abs() < 1e-15);
        assert!((r[&key(0, 2)] - 3.0 / denom).abs() < 1e-15);
        assert!((r[&key(1, 2)] - 5.0 / denom).abs() < 1e-15);

        let zeros: BTreeMap<_, _> = [(key(0, 1), 0.0), (key(0, 2), 0.0)].into();
        assert!(relative_inconsistency(&zeros, GroupKind::PerOutputNoise, 1e-5).values().all(|v| *v == 0.0));

        let single: BTreeMap<_, _> = [(key(0, 1), 1.0)].into();
        let r = relative_inconsistency(&single, GroupKind::PerOutputNoise, 1e-5);
        assert!((r[&key(0, 1)] - 1.0 / 1.00001).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let mut s = state(2);
        let d: BTreeMap<_, _> = [(key(0, 1), 0.25)].into();
        s.weights.insert(key(0, 1), 0.0);
        assert_eq!(regularization_loss(&s, &d), 0.0);
        s.weights.insert(key(0, 1), 2.0);
        assert_eq!(regularization_loss(&s, &d), 0.5);
        assert_eq!(regularization_loss_at(&s, &d, 29), 0.0);
        assert_eq!(regularization_loss_at(&s, &d, 30), 0.5);
    }

    #[test]
    fn softmax_update_examples() {
        let s = state(3);
        let uniform: BTreeMap<_, _> = s.keys().map(|k| (*k, 0.4)).collect();
        let same = update_weights(&s, &uniform);
        for w in same.weights.values() {
            assert!((w - 1.0).abs() < 1e-15);
        }
        let rel: BTreeMap<_, _> = [(key(0, 1), 1.0), (key(0, 2), 0.0), (key(1, 2), 0.0)].into();
        let next = update_weights(&s, &rel);
        assert!((next.weights[&key(0, 1)] - 0.934_48).abs() < 1e-5);
        assert!((next.weights[&key(0, 2)] - 1.032_76).abs() < 1e-5);
        assert!((next.weights[&key(1, 2)] - 1.032_76).abs() < 1e-5);

        let mut flat = s.clone();
        flat.config.lambda = 0.0;
        let next = update_weights(&flat, &rel);
        assert!(next.weights.values().all(|w| (w - 1.0).abs() < 1e-15));
    }

    #[test]
    fn frozen_keys_are_not_updated() {
        let mut s = state(3);
        s.frozen.insert(key(0, 1));
        s.weights.insert(key(0, 1), 1e-5);
        let rel: BTreeMap<_, _> = [(key(0, 1), 0.0), (key(0, 2), 1.0), (key(1, 2), 0.0)].into();
        let next = update_weights(&s, &rel);
        assert_eq!(next.weights[&key(0, 1)], 1e-5);
    }

    #[test]
    fn freeze_examples() {
        let mut s = state(3);
        s.weights.insert(key(0, 1), 0.5);
        s.weights.insert(key(0, 2), 0.2);
        s.weights.insert(key(1, 2), 0.9);
        let next = freeze_smallest(&s, 50);
        assert!(next.frozen.contains(&key(0, 2)));
        assert_eq!(next.weights[&key(0, 2)], 1e-5);
        assert_eq!(next.frozen.len(), 1);
        // not due
        assert_eq!(freeze_smallest(&s, 49), s);
        // everything frozen
        let mut all = s.clone();
        all.frozen = s.keys().copied().collect();
        assert_eq!(freeze_smallest(&all, 100), all);
    }

    #[test]
    fn ties_break_lexicographically() {
        let s = state(3);
        assert_eq!(s.smallest_active(), Some(key(0, 1)));
    }
}
