use std::path::PathBuf;
use std::process::ExitCode;

use boundary_scout::{run_experiment, Command, Error, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boundary-scout", version, about = "Multi-output GP experiments and boundary-seeking sampling")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Train/test RMSE tables on the closed-form suites.
    Bench(Common),
    /// Two-output negative-transfer demo.
    Motivate(Common),
    /// Adaptive sampling of the 4-mode oracle, followed by analysis.
    Sample(Common),
    /// Modes, sub-clusters and boundary pairs from an existing samples file.
    Analyze(Common),
    /// Recompute percentage decreases from an RMSE table and check consistency.
    Report(Common),
    /// Gradient and reference-implementation checks.
    Verify(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Bench(c) => (Command::Bench, c),
        Sub::Motivate(c) => (Command::Motivate, c),
        Sub::Sample(c) => (Command::Sample, c),
        Sub::Analyze(c) => (Command::Analyze, c),
        Sub::Report(c) => (Command::Report, c),
        Sub::Verify(c) => (Command::Verify, c),
    };
    let mut out_dir = common.out.clone();
    let result = ExperimentConfig::load(&common.config).and_then(|mut cfg| {
        if let Some(seed) = common.seed {
            cfg.seeds = vec![seed];
        }
        match &common.out {
            Some(out) => cfg.out_dir = out.clone(),
            None => out_dir = Some(cfg.out_dir.clone()),
        }
        run_experiment(command, &cfg)
    });
    match result {
        Ok(outcome) => {
            for l in &outcome.lines {
                println!("{l}");
            }
            println!("config hash {}", outcome.manifest.config_hash);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code: u8 = if e.is_config() { 2 } else { 1 };
            eprintln!("error: {e}");
            if let Some(dir) = out_dir.filter(|d| d.is_dir()) {
                let report = serde_json::json!({
                    "command": command.name(),
                    "kind": if e.is_config() { "config" } else { "runtime" },
                    "message": e.to_string(),
                    "exit_code": code,
                });
                let _ = std::fs::write(dir.join("error.json"), format!("{report:#}\n"));
            }
            if let Error::CellsFailed { .. } = e {
                eprintln!("artifacts for the successful cells were kept");
            }
            ExitCode::from(code)
        }
    }
}
