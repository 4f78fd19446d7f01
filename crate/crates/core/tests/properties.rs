use std::collections::BTreeMap;

use boundary_scout::analysis::{dbscan_subclusters, mean_shift_modes};
use boundary_scout::covariance::{
    coreg_matrix, factorize, joint_covariance, CoregionalizationParams, InputKernelParams, KernelKind, NoiseParams,
};
use boundary_scout::gp::params::pack;
use boundary_scout::gp::{log_marginal_likelihood, predict, Dataset, HyperParameters, ParamLayout};
use boundary_scout::ntm::{regularization_loss, update_weights, GroupKind, PairKey};
use boundary_scout::sampler::{score_candidate, CandidatePool, TestingSpace};
use boundary_scout::{RegularizationConfig, RegularizationState};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, &values[..rows * cols])
}

fn kernel_kind() -> impl Strategy<Value = KernelKind> {
    prop::sample::select(KernelKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_monotone(a in 0.0..10.0f64, b in 0.0..10.0f64, s in 0.0..10.0f64, g in 0.01..3.0f64, v in 0.01..3.0f64) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(score_candidate(lo, s, g, v) <= score_candidate(hi, s, g, v));
        prop_assert!(score_candidate(s, lo, g, v) <= score_candidate(s, hi, g, v));
    }

    #[test]
    fn sigma_scaling_keeps_the_argmax(
        sigmas in prop::collection::vec(0.0..5.0f64, 1..40),
        grads in prop::collection::vec(0.0..5.0f64, 40),
        c in 0.01..100.0f64,
    ) {
        let argmax = |scale: f64| {
            let mut best = 0;
            let scores: Vec<f64> = sigmas.iter().zip(&grads).map(|(s, gr)| score_candidate(*gr, s * scale, 0.0, 1.0)).collect();
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            best
        };
        prop_assert_eq!(argmax(1.0), argmax(c));
    }

    #[test]
    fn pool_shrinks_by_one_per_query(order in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle(), taken in 0..30usize) {
        let space = TestingSpace::grid(vec![(0.0, 1.0), (0.0, 1.0)], &[6, 5]).unwrap();
        let mut pool = CandidatePool::full(&space);
        for (k, c) in order.iter().take(taken).enumerate() {
            prop_assert!(pool.remove(*c));
            prop_assert_eq!(pool.len(), 30 - k - 1);
            prop_assert!(!pool.remove(*c));
        }
    }

    #[test]
    fn mean_shift_ignores_input_order(
        values in prop::collection::vec(-5.0..5.0f64, 80),
        order in Just((0..40usize).collect::<Vec<_>>()).prop_shuffle(),
        bandwidth in 0.5..3.0f64,
    ) {
        let y = matrix(40, 2, values);
        let permuted = DMatrix::from_fn(40, 2, |i, k| y[(order[i], k)]);
        let a = mean_shift_modes(&y, bandwidth).unwrap();
        let b = mean_shift_modes(&permuted, bandwidth).unwrap();
        prop_assert_eq!(a.modes.len(), b.modes.len());
        for i in 0..40 {
            for j in 0..40 {
                let same_a = a.labels[order[i]] == a.labels[order[j]];
                let same_b = b.labels[i] == b.labels[j];
                prop_assert_eq!(same_a, same_b);
            }
        }
    }

    #[test]
    fn weights_conserve_sum_and_order(rel in prop::collection::vec(0.0..1.0f64, 6), lambda in 0.0..5.0f64) {
        let cfg = RegularizationConfig { lambda, ..Default::default() };
        let state = RegularizationState::new(cfg, 3).unwrap();
        let keys: Vec<PairKey> = state.weights.keys().copied().collect();
        let rel: BTreeMap<PairKey, f64> = keys.iter().copied().zip(rel).collect();
        let next = update_weights(&state, &rel);
        for group in [GroupKind::PerOutputNoise, GroupKind::CoregDiagonal] {
            let members: Vec<&PairKey> = keys.iter().filter(|k| k.group == group).collect();
            let before: f64 = members.iter().map(|k| state.weights[*k]).sum();
            let after: f64 = members.iter().map(|k| next.weights[*k]).sum();
            prop_assert!((before - after).abs() < 1e-12);
            for a in &members {
                for b in &members {
                    if rel[*a] > rel[*b] {
                        prop_assert!(next.weights[*a] / state.weights[*a] <= next.weights[*b] / state.weights[*b]);
                    }
                }
            }
        }
    }

    #[test]
    fn mll_ignores_point_order(
        kind in kernel_kind(),
        xs in prop::collection::vec(0.0..3.0f64, 14),
        ys in prop::collection::vec(-2.0..2.0f64, 14),
        order in Just((0..7usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let x = matrix(7, 2, xs);
        let y = matrix(7, 2, ys);
        let h = HyperParameters::new(
            InputKernelParams::new(kind, 0.9, 1.3),
            2,
            NoiseParams { global: 1e-3, per_output: vec![0.1, 0.2] },
        );
        let px = DMatrix::from_fn(7, 2, |i, k| x[(order[i], k)]);
        let py = DMatrix::from_fn(7, 2, |i, k| y[(order[i], k)]);
        let a = log_marginal_likelihood(&h, &Dataset::new(x, y).unwrap()).unwrap();
        let b = log_marginal_likelihood(&h, &Dataset::new(px, py).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn extra_observation_never_raises_variance(
        kind in kernel_kind(),
        xs in prop::collection::vec(0.0..3.0f64, 7),
        ys in prop::collection::vec(-2.0..2.0f64, 7),
        q in prop::collection::vec(0.0..3.0f64, 5),
    ) {
        let h = HyperParameters::new(InputKernelParams::new(kind, 0.7, 1.0), 1, NoiseParams { global: 0.0, per_output: vec![1e-8] });
        let xq = matrix(5, 1, q);
        let small = Dataset::new(matrix(6, 1, xs.clone()), matrix(6, 1, ys.clone())).unwrap();
        let large = Dataset::new(matrix(7, 1, xs), matrix(7, 1, ys)).unwrap();
        let a = predict(&h, &small, &xq).unwrap();
        let b = predict(&h, &large, &xq).unwrap();
        for i in 0..5 {
            prop_assert!(b.variance[(i, 0)] <= a.variance[(i, 0)] + 1e-9);
        }
    }

    #[test]
    fn coregionalization_is_the_factor_product(t in 2..=5usize, entries in prop::collection::vec(-1.0..1.0f64, 25)) {
        let f = DMatrix::from_fn(t, t, |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Equal => entries[r * 5 + c].abs() + 0.1,
            std::cmp::Ordering::Greater => entries[r * 5 + c],
            std::cmp::Ordering::Less => 0.0,
        });
        let a = coreg_matrix(&CoregionalizationParams::from_factor(f.clone()).unwrap()).unwrap();
        for r in 0..t {
            for c in 0..t {
                let direct: f64 = (0..t).map(|k| f[(r, k)] * f[(c, k)]).sum();
                prop_assert!((a[(r, c)] - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn noisy_covariance_is_symmetric_and_factorizes(
        kind in kernel_kind(),
        xs in prop::collection::vec(0.0..3.0f64, 16),
        lower in -1.0..1.0f64,
    ) {
        let x = matrix(8, 2, xs);
        let mut h = HyperParameters::new(InputKernelParams::new(kind, 1.1, 1.0), 2, NoiseParams { global: 0.0, per_output: vec![1e-8, 1e-8] });
        h.latents[0].coreg.factor[(1, 0)] = lower;
        let cov = joint_covariance(&h.latents, &x, &h.noise).unwrap();
        let m = &cov.noisy;
        let scale = m.amax();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                prop_assert!((m[(r, c)] - m[(c, r)]).abs() <= 1e-12 * scale);
            }
        }
        prop_assert!(factorize(m).is_ok());
    }

    #[test]
    fn dbscan_members_are_density_reachable(
        values in prop::collection::vec(0.0..1.0f64, 2..200),
        eps in 0.02..0.2f64,
        min_pts in 1..5usize,
    ) {
        let n = values.len() / 2;
        prop_assume!(n >= 1);
        let x = matrix(n, 2, values);
        let db = dbscan_subclusters(&x, eps, min_pts).unwrap();
        let d = |i: usize, j: usize| ((x[(i, 0)] - x[(j, 0)]).powi(2) + (x[(i, 1)] - x[(j, 1)]).powi(2)).sqrt();
        let core = |i: usize| (0..n).filter(|&j| d(i, j) <= eps).count() >= min_pts;
        for c in &db.clusters {
            prop_assert!(c.len() >= min_pts);
            for &i in c {
                prop_assert!(c.iter().any(|&j| core(j) && d(i, j) <= eps));
            }
        }
    }
}

/// A small raw gradient step on the penalty alone lowers it.
#[test]
fn penalty_step_reduces_inconsistency() {
    let h = HyperParameters::new(
        InputKernelParams::new(KernelKind::SquaredExponential, 1.0, 1.0),
        3,
        NoiseParams {
            global: 0.01,
            per_output: vec![0.1, 0.3, 0.6],
        },
    );
    let state = RegularizationState::new(RegularizationConfig::default(), 3).unwrap();
    let layout = ParamLayout::of(&h);
    let raw = pack(&h, &layout);
    let (before, grad) = state.penalty(30, &h, &layout, &raw, &state.deltas(&h));
    assert!(before > 0.0);
    let stepped: Vec<f64> = raw.iter().zip(&grad).map(|(r, g)| r - 1e-3 * g).collect();
    let h2 = boundary_scout::gp::params::unpack(&h, &layout, &stepped);
    let (after, _) = state.penalty(30, &h2, &layout, &stepped, &state.deltas(&h2));
    assert!(after < before, "{before} -> {after}");
}

/// With every pair frozen the penalty is the freeze value times ΣΔ and nearly inert.
#[test]
fn fully_frozen_penalty_is_negligible() {
    let h = HyperParameters::new(
        InputKernelParams::new(KernelKind::SquaredExponential, 1.0, 1.0),
        3,
        NoiseParams {
            global: 0.01,
            per_output: vec![0.1, 0.3, 0.6],
        },
    );
    let mut state = RegularizationState::new(RegularizationConfig::default(), 3).unwrap();
    for it in (50..=300).step_by(50) {
        state.freeze_smallest(it);
    }
    assert_eq!(state.freeze_events.len(), state.weights.len());
    let layout = ParamLayout::of(&h);
    let raw = pack(&h, &layout);
    let deltas = state.deltas(&h);
    let (loss, grad) = state.penalty(400, &h, &layout, &raw, &deltas);
    let total: f64 = deltas.values().sum();
    assert!((loss - 1e-5 * total).abs() < 1e-15);
    assert!((regularization_loss(&state, &deltas) - loss).abs() < 1e-15);

    let mut unit = state.clone();
    unit.weights.values_mut().for_each(|w| *w = 1.0);
    let (_, full) = unit.penalty(400, &h, &layout, &raw, &deltas);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm(&grad) <= 1e-5 * norm(&full) * (1.0 + 1e-12));
}
