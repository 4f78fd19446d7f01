use std::sync::OnceLock;

use boundary_scout::benchmarks::{gen_motivation_pair, gen_suite_dataset};
use boundary_scout::experiment::RegressionResult;
use boundary_scout::gp::train;
use boundary_scout::ntm::{train_with_ntm, GroupKind};
use boundary_scout::{
    run_experiment, Command, ExperimentConfig, HyperParameters, ModelKind, RegularizationConfig, RegularizationState,
    SuiteId, TrainConfig,
};

fn three_output_data() -> boundary_scout::Dataset {
    gen_suite_dataset(SuiteId::SingleInput(1), 40, 7, Default::default()).unwrap()
}

#[test]
fn zero_weight_regularization_matches_plain_training() {
    let data = three_output_data();
    let cfg = TrainConfig {
        iterations: 80,
        ..Default::default()
    };
    let h0 = HyperParameters::initial(&data, cfg.kernel, 1).unwrap();
    let plain = train(&h0, &data, &cfg).unwrap();
    let mut reg = RegularizationState::new(
        RegularizationConfig {
            initial_weight: 0.0,
            interval: None,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    let ntm = train_with_ntm(&h0, &data, &cfg, &mut reg, None).unwrap();
    assert_eq!(plain.params, ntm.params);
    let a: Vec<f64> = plain.trace.records.iter().map(|r| r.neg_mll).collect();
    let b: Vec<f64> = ntm.trace.records.iter().map(|r| r.neg_mll).collect();
    assert_eq!(a, b);
}

#[test]
fn frozen_set_only_grows() {
    let data = three_output_data();
    let cfg = TrainConfig {
        iterations: 300,
        ..Default::default()
    };
    let h0 = HyperParameters::initial(&data, cfg.kernel, 1).unwrap();
    let mut reg = RegularizationState::new(RegularizationConfig::default(), 3).unwrap();
    train_with_ntm(&h0, &data, &cfg, &mut reg, None).unwrap();
    let mut last = 0;
    let mut by_iteration = std::collections::BTreeMap::<usize, usize>::new();
    for r in &reg.history {
        *by_iteration.entry(r.iteration).or_default() += usize::from(r.frozen);
    }
    for frozen in by_iteration.values() {
        assert!(*frozen >= last);
        last = *frozen;
    }
    assert_eq!(last, 6);
}

#[test]
fn three_keys_freeze_by_iteration_150() {
    let data = three_output_data();
    let cfg = TrainConfig {
        iterations: 150,
        ..Default::default()
    };
    let h0 = HyperParameters::initial(&data, cfg.kernel, 1).unwrap();
    let mut reg = RegularizationState::new(
        RegularizationConfig {
            groups: vec![GroupKind::PerOutputNoise],
            ..Default::default()
        },
        3,
    )
    .unwrap();
    train_with_ntm(&h0, &data, &cfg, &mut reg, None).unwrap();
    let at: Vec<usize> = reg.freeze_events.iter().map(|e| e.0).collect();
    assert_eq!(at, vec![50, 100, 150]);
}

#[test]
fn motivation_pair_has_fifteen_points() {
    let d = gen_motivation_pair(0);
    assert_eq!((d.len(), d.outputs()), (15, 2));
    assert_eq!(d.x, gen_motivation_pair(0).x);
}

/// The two-function demo with all three models over 20 seeds, shared by the tests below.
fn motivation_runs() -> &'static Vec<RegressionResult> {
    static RUNS: OnceLock<Vec<RegressionResult>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::from_toml_str(
            "kind = \"motivation-demo\"\nseeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19]\n",
        )
        .unwrap();
        cfg.out_dir = dir.path().to_path_buf();
        let out = run_experiment(Command::Motivate, &cfg).unwrap();
        assert!(out.lines.iter().any(|l| l.starts_with("verdict: ")));
        out.bench.unwrap().runs
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn y1_test(model: ModelKind) -> Vec<f64> {
    motivation_runs().iter().filter(|r| r.model == model).map(|r| r.test_rmse[0]).collect()
}

#[test]
fn demo_reports_both_outputs_for_every_model() {
    let runs = motivation_runs();
    assert_eq!(runs.len(), 60);
    assert!(runs.iter().all(|r| r.test_rmse.len() == 2 && r.train_rmse.len() == 2));
}

#[test]
fn regularized_median_y1_is_no_worse_than_conventional() {
    let ntm = median(y1_test(ModelKind::MogprNtm));
    let conv = median(y1_test(ModelKind::ConventionalMogpr));
    assert!(ntm <= conv, "median y1 test RMSE: regularized {ntm:.4}, conventional {conv:.4}");
}

#[test]
fn independent_models_fit_training_data_better_than_held_out() {
    let runs: Vec<&RegressionResult> = motivation_runs().iter().filter(|r| r.model == ModelKind::Sogpr).collect();
    for o in 0..2 {
        let train: f64 = runs.iter().map(|r| r.train_rmse[o]).sum::<f64>() / runs.len() as f64;
        let test: f64 = runs.iter().map(|r| r.test_rmse[o]).sum::<f64>() / runs.len() as f64;
        assert!(train < test, "output {o}: mean train RMSE {train:.4} vs test {test:.4}");
    }
}
