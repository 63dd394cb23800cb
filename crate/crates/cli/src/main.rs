//! `chaos`: command-line controller for resilience experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 agent unreachable,
//! 4 experiment invalid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chaos_core::config::{self, ConfigError, ExperimentConfig, Overrides, Workload};
use chaos_core::controller::{
    run_exploration, run_falsification, run_observation, ControllerError, HypothesisStatus,
    HypothesisStore,
};
use chaos_core::report::{build_report, render_json, render_text};

const EXIT_CONFIG: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;
const EXIT_INVALID: u8 = 4;

#[derive(Parser)]
#[command(name = "chaos", version, about = "Chaos experiments on error-recovery blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Experiment configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Experiment window length in seconds
    #[arg(long)]
    window: Option<u64>,
    /// Stall timeout in seconds: a target still running this long after its
    /// window is killed and recorded as stalled
    #[arg(long)]
    timeout: Option<u64>,
    /// Blast-radius cap: maximum concurrently active injectors
    #[arg(long)]
    max_active: Option<u32>,
    /// Steady-state spec preset: cli-task or http
    #[arg(long)]
    spec: Option<String>,
    /// Override the recorded workload trace file
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an unperturbed observation window
    Observe(CommonOpts),
    /// Perturb every registered point, one window each, and write the report
    Explore(CommonOpts),
    /// Re-test accepted hypotheses against the current target build
    Falsify(CommonOpts),
    /// Regenerate the report from the newest exploration run's evidence
    Report {
        #[command(flatten)]
        common: CommonOpts,
        /// Write the JSON report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Render a human-readable table instead of JSON
        #[arg(long)]
        text: bool,
    },
    /// Promote proposed hypotheses to accepted
    AcceptHypothesis {
        #[command(flatten)]
        common: CommonOpts,
        /// Hypothesis ids to accept; use `--all` for every proposed one
        ids: Vec<String>,
        #[arg(long)]
        all: bool,
    },
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig, ConfigError> {
    let overrides = Overrides {
        window_seconds: common.window,
        stall_timeout_seconds: common.timeout,
        max_concurrent_active: common.max_active,
        spec_preset: common.spec.clone(),
        experiment_dir: None,
    };
    let mut cfg = config::resolve_from_process_env(Some(&common.config), &overrides)?;
    if let Some(trace) = &common.trace {
        match &mut cfg.workload {
            Workload::Replay { trace: t, .. } => *t = trace.clone(),
            Workload::Task { .. } => {
                return Err(ConfigError::Invalid(
                    "--trace only applies to replay workloads".into(),
                ))
            }
        }
    }
    Ok(cfg)
}

fn controller_exit(e: ControllerError) -> ExitCode {
    eprintln!("chaos: {e}");
    match e {
        ControllerError::AgentUnreachable(_) => ExitCode::from(EXIT_UNREACHABLE),
        _ => ExitCode::from(EXIT_INVALID),
    }
}

fn newest_bundles(cfg: &ExperimentConfig) -> Result<PathBuf, String> {
    let exploration = cfg.experiment_dir.join("exploration");
    let mut candidates: Vec<PathBuf> = std::fs::read_dir(&exploration)
        .map_err(|e| format!("no exploration runs under {}: {e}", exploration.display()))?
        .filter_map(|entry| {
            let path = entry.ok()?.path().join("bundles.json");
            path.exists().then_some(path)
        })
        .collect();
    candidates.sort_by_key(|p| {
        std::fs::metadata(p)
            .and_then(|m| m.modified())
            .unwrap_or(std::time::SystemTime::UNIX_EPOCH)
    });
    candidates
        .pop()
        .ok_or_else(|| "no exploration run has evidence bundles".to_string())
}

fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Observe(common) => {
            let cfg = match load_config(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match run_observation(&cfg) {
                Ok(outcome) => {
                    println!(
                        "observation ok: {} point(s) registered, artifacts in {}",
                        outcome.points.len(),
                        outcome.run_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => controller_exit(e),
            }
        }
        Command::Explore(common) => {
            let cfg = match load_config(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match run_exploration(&cfg) {
                Ok(outcome) => {
                    println!(
                        "exploration ok: {} window(s), {} new hypothesis(es), report at {}",
                        outcome.bundles.len(),
                        outcome.proposed.len(),
                        outcome.report_json_path.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => controller_exit(e),
            }
        }
        Command::Falsify(common) => {
            let cfg = match load_config(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match run_falsification(&cfg) {
                Ok(outcome) => {
                    if outcome.results.is_empty() {
                        println!("falsification: no accepted hypotheses, nothing to do");
                    } else {
                        for (hypothesis, status) in &outcome.results {
                            println!("{}: {:?}", hypothesis.id, status);
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => controller_exit(e),
            }
        }
        Command::Report { common, out, text } => {
            let cfg = match load_config(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let bundles_path = match newest_bundles(&cfg) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_INVALID);
                }
            };
            let bundles: Vec<chaos_core::classifier::EvidenceBundle> =
                match std::fs::read_to_string(&bundles_path)
                    .map_err(|e| e.to_string())
                    .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
                {
                    Ok(b) => b,
                    Err(e) => {
                        eprintln!("chaos: unreadable evidence bundles: {e}");
                        return ExitCode::from(EXIT_INVALID);
                    }
                };
            let spec = chaos_core::controller::spec_of(&cfg);
            let report = build_report(&bundles, &spec, &cfg.app_version);
            let rendered = if text {
                render_text(&report)
            } else {
                render_json(&report)
            };
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, rendered) {
                        eprintln!("chaos: cannot write {}: {e}", path.display());
                        return ExitCode::from(EXIT_INVALID);
                    }
                    println!("report written to {}", path.display());
                }
                None => print!("{rendered}"),
            }
            ExitCode::SUCCESS
        }
        Command::AcceptHypothesis { common, ids, all } => {
            let cfg = match load_config(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let store_path = cfg.experiment_dir.join("hypotheses.db");
            let mut store = match HypothesisStore::load(&store_path) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_INVALID);
                }
            };
            let targets: Vec<String> = if all {
                store
                    .all_current()
                    .into_iter()
                    .filter(|r| r.status == HypothesisStatus::Proposed)
                    .map(|r| r.id)
                    .collect()
            } else {
                ids
            };
            if targets.is_empty() {
                eprintln!("chaos: nothing to accept (no matching proposed hypotheses)");
                return ExitCode::from(EXIT_INVALID);
            }
            for id in &targets {
                if let Err(e) = store.accept(id, &cfg.app_version) {
                    eprintln!("chaos: {e}");
                    return ExitCode::from(EXIT_INVALID);
                }
                println!("accepted {id}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    run(Cli::parse())
}
