use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use boundary_scout::experiment::percentage_decrease;
use boundary_scout::{run_experiment, Command, Error, ExperimentConfig, Manifest};

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(text).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

const SMALL_BENCH: &str = r#"
kind = "function-benchmark"
seeds = [0, 1]
suites = ["single-2", "multi-1"]
n = 30
[train]
iterations = 40
"#;

const SMALL_SAMPLE: &str = r#"
kind = "boundary-sampling"
models = ["conventional-mogpr"]
seeds = [2]
random_baseline = true
[sampler]
budget = 15
initial_iterations = 40
retrain_iterations = 5
"#;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

#[test]
fn invalid_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ExperimentConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml_str("[train]\nsteps = 3"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml_str("suites = [\"single-9\"]"), Err(Error::Config(_))));
    let empty = config("seeds = []", dir.path());
    assert!(run_experiment(Command::Bench, &empty).unwrap_err().is_config());
    let wrong_kind = config("kind = \"motivation-demo\"", dir.path());
    assert!(run_experiment(Command::Bench, &wrong_kind).unwrap_err().is_config());
    let missing = config(&format!("kind = \"boundary-sampling\"\nsamples = {:?}", dir.path().join("nope.csv")), dir.path());
    assert!(run_experiment(Command::Analyze, &missing).unwrap_err().is_config());
}

#[test]
fn hash_ignores_output_directory_only() {
    let a = config(SMALL_BENCH, Path::new("a"));
    let b = config(SMALL_BENCH, Path::new("b"));
    assert_eq!(a.hash(), b.hash());
    let mut c = a.clone();
    c.seeds = vec![7];
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn identical_configs_give_identical_manifests() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run_experiment(Command::Bench, &config(SMALL_BENCH, a.path())).unwrap().manifest;
    let mb = run_experiment(Command::Bench, &config(SMALL_BENCH, b.path())).unwrap().manifest;
    assert_eq!(ma, mb);
    assert_eq!(Manifest::load(&a.path().join("manifest.json")).unwrap(), ma);
    for art in &ma.artifacts {
        let first = std::fs::read_to_string(a.path().join(&art.path)).unwrap();
        if art.path.ends_with(".csv") {
            assert!(first.starts_with(&format!("# config_hash={}", ma.config_hash)), "{}", art.path);
        }
    }
}

fn columns(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn reported_averages_match_the_emitted_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(SMALL_BENCH, dir.path());
    run_experiment(Command::Bench, &cfg).unwrap();
    let (header, rows) = columns(&dir.path().join("rmse_table.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (conv, ntm) = (col("conventional-mogpr_test"), col("mogpr-ntm_test"));
    let mut families: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let family = if r[0].starts_with("single") { "single-input" } else { "multi-input" };
        let (a, b): (f64, f64) = (r[conv].parse().unwrap(), r[ntm].parse().unwrap());
        families.entry(family).or_default().push(100.0 * (a - b) / a);
        assert!((percentage_decrease(a, b).unwrap() - 100.0 * (a - b) / a).abs() < 1e-12);
    }
    let manifest = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    for (family, v) in &families {
        let expect = v.iter().sum::<f64>() / v.len() as f64;
        let reported = manifest.summary["average_decrease"][family].as_f64().unwrap();
        assert!((expect - reported).abs() < 1e-9, "{family}: {expect} vs {reported}");
    }
    let report = run_experiment(Command::Report, &cfg).unwrap();
    assert!(report.lines.iter().any(|l| l.starts_with("consistency: ok")), "{:?}", report.lines);
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn analyze_recomputes_from_samples() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(Command::Sample, &config(SMALL_SAMPLE, a.path())).unwrap();
    let mut cfg = config(SMALL_SAMPLE, b.path());
    cfg.samples = Some(a.path().join("samples.csv"));
    run_experiment(Command::Analyze, &cfg).unwrap();
    for file in ["modes.csv", "boundary_pairs.csv"] {
        let (ha, ra) = columns(&a.path().join(file));
        let (hb, rb) = columns(&b.path().join(file));
        assert_eq!((ha, ra), (hb, rb), "{file}");
    }
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(Command::Verify, &config("", dir.path())).unwrap();
    assert!(dir.path().join("verify.json").exists());
    assert!(!out.lines.is_empty());
}
