//! Standalone experiment controller: spawns the target per window, drives
//! the agent over the socket protocol, assembles per-point evidence bundles
//! and runs the three experiment modes (observation, exploration,
//! falsification).
//!
//! Every window gets its own directory under the experiment directory with
//! the window's journal, application log, console capture and evidence
//! bundle, so a finished experiment can be audited file by file.

mod blast;
mod hypothesis;

pub use blast::{BlastDenied, BlastGuard};
pub use hypothesis::{
    hypothesis_id, HypothesisRecord, HypothesisStatus, HypothesisStore, StoreError,
};

use std::collections::HashMap;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde_json::json;
use thiserror::Error;

use crate::classifier::{
    classify, Classification, EvidenceBundle, ExecCounts, InteractionDiff, InteractionOutcome,
    SteadyStateSpec,
};
use crate::config::{ExperimentConfig, Workload};
use crate::harness::{self, TraceStep};
use crate::injection::{InjectedError, InjectionPoint, PointId, PointKey};
use crate::protocol::{AgentSession, SessionError, SessionOptions};
use crate::report::{build_report, render_json, render_text, ResilienceReport};
use crate::telemetry::{
    digest_behavior, diff_metrics, read_journal, scan_logs, ExitRecord, JournalRecord,
    JournalWriter, LogSink, MetricsDelta, MetricsSnapshot, RecordKind,
};
use crate::unix_millis;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("agent unreachable: {0}")]
    AgentUnreachable(String),
    #[error("experiment invalid: {0}")]
    ExperimentInvalid(String),
}

impl From<SessionError> for ControllerError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Unreachable { addr, reason } => {
                ControllerError::AgentUnreachable(format!("{addr}: {reason}"))
            }
            other => ControllerError::ExperimentInvalid(other.to_string()),
        }
    }
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn fresh_run_id(mode: &str) -> String {
    let n = RUN_COUNTER.fetch_add(1, Ordering::Relaxed);
    format!("{mode}-{}-{n}", unix_millis())
}

fn free_addr() -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    Ok(listener.local_addr()?.to_string())
}

fn sanitize(key: &PointKey) -> String {
    format!("{key}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn spec_of(cfg: &ExperimentConfig) -> SteadyStateSpec {
    SteadyStateSpec {
        preset: cfg.spec_preset,
        comparator: cfg.comparator,
    }
}

/// What one window left behind, before interpretation.
struct WindowResult {
    window_id: String,
    dir: PathBuf,
    exit: ExitRecord,
    console: Vec<u8>,
    /// (observation, perturbed, fired) per point from the journal's last
    /// counters record.
    counters: HashMap<PointId, (u64, u64, u64)>,
    metrics: Option<MetricsSnapshot>,
    task_completed: Option<bool>,
    replay: Option<Vec<(String, Option<crate::telemetry::Transcript>)>>,
    points: Vec<InjectionPoint>,
    activation: Option<Activation>,
}

#[derive(Debug, Clone)]
struct Activation {
    point: InjectionPoint,
    activate_ms: u64,
    deadline_ms: u64,
    release_ms: u64,
}

struct JournalSummary {
    counters: HashMap<PointId, (u64, u64, u64)>,
    metrics: Option<MetricsSnapshot>,
    probes: HashMap<String, u64>,
    task_completed: Option<bool>,
}

fn summarize_journal(records: &[JournalRecord]) -> JournalSummary {
    let mut summary = JournalSummary {
        counters: HashMap::new(),
        metrics: None,
        probes: HashMap::new(),
        task_completed: None,
    };
    for record in records {
        if record.kind != RecordKind::Metrics {
            continue;
        }
        let p = &record.payload;
        if let Some(cpu) = p["cpu_time_ms"].as_u64() {
            summary.metrics = Some(MetricsSnapshot {
                cpu_time_ms: cpu,
                memory_bytes: p["memory_bytes"].as_u64().unwrap_or(0),
                peak_threads: p["peak_threads"].as_u64().unwrap_or(0),
                wall_clock_ms: record.ts,
            });
        }
        if let Some(counters) = p["counters"].as_array() {
            summary.counters = counters
                .iter()
                .filter_map(|c| {
                    Some((
                        PointId(c["point_id"].as_str()?.to_string()),
                        (
                            c["observation"].as_u64()?,
                            c["perturbed"].as_u64()?,
                            c["fired"].as_u64()?,
                        ),
                    ))
                })
                .collect();
        }
        if let Some(probes) = p["probes"].as_array() {
            summary.probes = probes
                .iter()
                .filter_map(|e| {
                    Some((e["probe"].as_str()?.to_string(), e["count"].as_u64()?))
                })
                .collect();
        }
        if let Some(done) = p["task_completed"].as_bool() {
            summary.task_completed = Some(done);
        }
    }
    summary
}

fn kill_and_reap(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}

fn wait_exit(child: &mut Child, timeout: Duration) -> Option<std::process::ExitStatus> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Ok(Some(status)) = child.try_wait() {
            return Some(status);
        }
        if Instant::now() >= deadline {
            return None;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn wait_listening(addr: &str, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if std::net::TcpStream::connect(addr).is_ok() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

/// Run one experiment window: spawn the target, optionally activate one
/// injector, drive the workload, and collect the window's evidence.
fn run_window(
    cfg: &ExperimentConfig,
    dir: &Path,
    window_id: &str,
    activate: Option<&PointKey>,
    trace_verbosity: bool,
    steps: Option<&[TraceStep]>,
) -> Result<WindowResult, ControllerError> {
    std::fs::create_dir_all(dir)?;
    let journal_path = dir.join("journal.jsonl");
    let log_path = dir.join("app.log");
    let console_path = dir.join("console.out");
    let artifact_path = dir.join("artifact.out");
    let trace_path = dir.join("entries.trace");

    let agent_addr = free_addr()?;
    let service_addr = match &cfg.workload {
        Workload::Replay { .. } => Some(free_addr()?),
        Workload::Task { .. } => None,
    };

    let mut command = Command::new(&cfg.target_command[0]);
    command
        .args(&cfg.target_command[1..])
        .env("CHAOS_AGENT_ADDR", &agent_addr)
        .env("CHAOS_JOURNAL", &journal_path)
        .env("CHAOS_ARTIFACT", &artifact_path)
        .env("CHAOS_WAIT_ACTIVATION_MS", "800")
        .stdout(Stdio::from(std::fs::File::create(&console_path)?))
        .stderr(Stdio::from(std::fs::File::create(&log_path)?))
        .stdin(Stdio::null());
    if trace_verbosity {
        command
            .env("CHAOS_VERBOSITY", "trace")
            .env("CHAOS_TRACE_FILE", &trace_path);
    }
    if let Some(addr) = &service_addr {
        command.env("CHAOS_SERVICE_ADDR", addr);
    }
    let mut child = command.spawn().map_err(|e| {
        ControllerError::ExperimentInvalid(format!(
            "cannot spawn target {:?}: {e}",
            cfg.target_command[0]
        ))
    })?;

    // mostly a test hook: how long to keep retrying the agent endpoint while
    // the target boots
    let connect_timeout = std::env::var("CHAOS_CONNECT_TIMEOUT_MS")
        .ok()
        .and_then(|v| v.parse().ok())
        .map_or(Duration::from_secs(10), Duration::from_millis);
    let session = match AgentSession::connect(
        &agent_addr,
        SessionOptions {
            connect_timeout,
            ..Default::default()
        },
    ) {
        Ok(s) => s,
        Err(e) => {
            kill_and_reap(&mut child);
            return Err(e.into());
        }
    };
    let points = session.points().to_vec();

    let mut activation = None;
    if let Some(key) = activate {
        let point = points.iter().find(|p| &p.key() == key).cloned();
        match point {
            Some(point) => {
                let activate_ms = unix_millis();
                session.activate(&point.point_id, cfg.window())?;
                activation = Some(Activation {
                    point,
                    activate_ms,
                    deadline_ms: activate_ms + cfg.window().as_millis() as u64,
                    release_ms: 0,
                });
            }
            None => {
                kill_and_reap(&mut child);
                return Err(ControllerError::ExperimentInvalid(format!(
                    "point {key} not registered by the target"
                )));
            }
        }
    }

    let started = Instant::now();
    let mut replay = None;
    let exit = match &cfg.workload {
        Workload::Task { .. } => match wait_exit(&mut child, cfg.stall_timeout()) {
            Some(status) => match status.code() {
                Some(0) => ExitRecord::normal(0),
                code => ExitRecord::crashed(code),
            },
            None => {
                kill_and_reap(&mut child);
                ExitRecord::stalled_killed(started.elapsed().as_secs_f64())
            }
        },
        Workload::Replay { .. } => {
            let addr = service_addr.as_ref().expect("replay has a service addr");
            if !wait_listening(addr, Duration::from_secs(5)) {
                kill_and_reap(&mut child);
                return Err(ControllerError::ExperimentInvalid(format!(
                    "service never started listening on {addr}"
                )));
            }
            let steps = steps.ok_or_else(|| {
                ControllerError::ExperimentInvalid("replay workload without a trace".into())
            })?;
            let step_timeout = Duration::from_secs(2).min(cfg.stall_timeout());
            replay = Some(harness::replay_trace(addr, steps, step_timeout));
            let exit = match child.try_wait() {
                Ok(Some(status)) => match status.code() {
                    Some(0) => ExitRecord::normal(0),
                    code => ExitRecord::crashed(code),
                },
                _ => ExitRecord::normal(0), // still serving at window end
            };
            // ask the target to wind down so its sidecar writes the final
            // journal record, then enforce
            if let Some(a) = &activation {
                let _ = session.deactivate(&a.point.point_id);
            }
            session.bye();
            if wait_exit(&mut child, Duration::from_secs(3)).is_none() {
                kill_and_reap(&mut child);
            }
            exit
        }
    };

    if let Some(a) = &mut activation {
        a.release_ms = unix_millis();
    }
    drop(session);

    let records = read_journal(&journal_path).unwrap_or_default();
    let summary = summarize_journal(&records);
    let console = std::fs::read(&console_path).unwrap_or_default();
    let task_completed = match &cfg.workload {
        Workload::Task { .. } => Some(summary.task_completed.unwrap_or(false) && artifact_path.exists()),
        Workload::Replay { .. } => None,
    };

    Ok(WindowResult {
        window_id: window_id.to_string(),
        dir: dir.to_path_buf(),
        exit,
        console,
        counters: summary.counters,
        metrics: summary.metrics,
        task_completed,
        replay,
        points,
        activation,
    })
}

fn console_status_token(exit: &ExitRecord) -> String {
    match exit.exit_code {
        Some(code) => code.to_string(),
        None => "killed".to_string(),
    }
}

fn console_diff(
    baseline: &WindowResult,
    perturbed: &WindowResult,
    spec: &SteadyStateSpec,
) -> InteractionDiff {
    let expected = harness::console_transcript(
        &console_status_token(&baseline.exit),
        &baseline.console,
    );
    let actual = harness::console_transcript(
        &console_status_token(&perturbed.exit),
        &perturbed.console,
    );
    let expected_digest = digest_behavior(&expected, spec.comparator);
    let actual_digest = digest_behavior(&actual, spec.comparator);
    // a killed hang has no exit code the user ever saw, so only two actual
    // exit codes can differ visibly
    let status_changed = match (baseline.exit.exit_code, perturbed.exit.exit_code) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    };
    InteractionDiff {
        interaction_id: "console".to_string(),
        outcome: if expected_digest.equivalent(&actual_digest) {
            InteractionOutcome::Equal
        } else {
            InteractionOutcome::Different
        },
        status_changed,
        error_indicator: harness::error_indicator(&actual.status_token, &actual.body),
    }
}

/// Interpret one perturbed window against its baseline as an evidence bundle,
/// appending the derived records to the window's journal.
fn assemble_bundle(
    cfg: &ExperimentConfig,
    baseline: &WindowResult,
    perturbed: &WindowResult,
    steps: Option<&[TraceStep]>,
) -> EvidenceBundle {
    let spec = spec_of(cfg);
    let activation = perturbed
        .activation
        .as_ref()
        .expect("perturbed window has an activation");
    let point = &activation.point;

    let (observation, perturbed_count, fired) = perturbed
        .counters
        .get(&point.point_id)
        .copied()
        .unwrap_or((0, 0, 0));

    let log_evidence = scan_logs(
        &LogSink::File(perturbed.dir.join("app.log")),
        point,
        &InjectedError::marker(&point.point_id),
    );

    let metrics_delta = match (&baseline.metrics, &perturbed.metrics) {
        (Some(b), Some(p)) => diff_metrics(b, p, cfg.metrics_threshold),
        _ => MetricsDelta::Unavailable,
    };

    let digest_diff = match (&cfg.workload, steps) {
        (Workload::Replay { .. }, Some(steps)) => {
            let empty = Vec::new();
            let replayed = perturbed.replay.as_ref().unwrap_or(&empty);
            harness::diff_replay(steps, replayed, spec.comparator)
        }
        _ => vec![console_diff(baseline, perturbed, &spec)],
    };

    let bundle = EvidenceBundle {
        point: point.key(),
        point_id: point.point_id.clone(),
        window_id: perturbed.window_id.clone(),
        counts: ExecCounts {
            observation,
            perturbed: perturbed_count,
            injections_fired: fired,
        },
        log_evidence,
        metrics_delta,
        digest_diff,
        exit: perturbed.exit,
        task_completed: perturbed.task_completed,
    };

    // derived records go into the same journal so the window directory is
    // self-contained
    if let Ok(journal) = JournalWriter::open_append(&perturbed.dir.join("journal.jsonl")) {
        journal.append(&JournalRecord {
            ts: unix_millis(),
            kind: RecordKind::Log,
            point_id: Some(point.point_id.clone()),
            payload: serde_json::to_value(&bundle.log_evidence).unwrap_or_default(),
        });
        journal.append(&JournalRecord {
            ts: unix_millis(),
            kind: RecordKind::Digest,
            point_id: Some(point.point_id.clone()),
            payload: serde_json::to_value(&bundle.digest_diff).unwrap_or_default(),
        });
        journal.append(&JournalRecord {
            ts: unix_millis(),
            kind: RecordKind::Exit,
            point_id: Some(point.point_id.clone()),
            payload: serde_json::to_value(bundle.exit).unwrap_or_default(),
        });
    }

    bundle
}

fn trace_steps(cfg: &ExperimentConfig) -> Result<Option<Vec<TraceStep>>, ControllerError> {
    match &cfg.workload {
        Workload::Replay { trace, .. } => {
            let steps = harness::read_trace(trace).map_err(|e| {
                ControllerError::ExperimentInvalid(format!("trace unusable: {e}"))
            })?;
            if steps.is_empty() {
                return Err(ControllerError::ExperimentInvalid("trace has no steps".into()));
            }
            Ok(Some(steps))
        }
        Workload::Task { .. } => Ok(None),
    }
}

#[derive(Debug)]
pub struct ObservationOutcome {
    pub run_dir: PathBuf,
    pub points: Vec<InjectionPoint>,
    /// Observation execution counts per point.
    pub executions: HashMap<PointId, u64>,
    pub exit: ExitRecord,
}

/// Observation mode: one unperturbed window that inventories the points and
/// proves the instrumented target behaves normally with every injector idle.
pub fn run_observation(cfg: &ExperimentConfig) -> Result<ObservationOutcome, ControllerError> {
    let run_id = fresh_run_id("obs");
    let run_dir = cfg.experiment_dir.join("baseline").join(&run_id);
    let steps = trace_steps(cfg)?;
    let result = run_window(cfg, &run_dir, &run_id, None, false, steps.as_deref())?;

    let fired: u64 = result.counters.values().map(|(_, _, f)| f).sum();
    let perturbed: u64 = result.counters.values().map(|(_, p, _)| p).sum();
    if fired > 0 || perturbed > 0 {
        return Err(ControllerError::ExperimentInvalid(format!(
            "observation window saw {fired} injection(s) and {perturbed} perturbed execution(s); \
             an injector was active outside exploration"
        )));
    }

    let executions = result
        .counters
        .iter()
        .map(|(id, (obs, _, _))| (id.clone(), *obs))
        .collect();
    let summary = json!({
        "run_id": run_id,
        "mode": "observation",
        "points": result.points,
        "executions": result.counters.iter()
            .map(|(id, (obs, _, _))| json!({"point_id": id, "observation": obs}))
            .collect::<Vec<_>>(),
        "exit": result.exit,
        "metrics": result.metrics,
        "task_completed": result.task_completed,
    });
    std::fs::write(run_dir.join("observation.json"), serde_json::to_string_pretty(&summary)?)?;

    Ok(ObservationOutcome {
        run_dir,
        points: result.points,
        executions,
        exit: result.exit,
    })
}

#[derive(Debug)]
pub struct ExplorationOutcome {
    pub run_dir: PathBuf,
    pub bundles: Vec<EvidenceBundle>,
    pub report: ResilienceReport,
    pub report_json_path: PathBuf,
    /// Hypothesis ids newly proposed from this run.
    pub proposed: Vec<String>,
}

fn append_timeline(path: &Path, entry: &serde_json::Value) -> std::io::Result<()> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{entry}")
}

/// Exploration mode: a fresh baseline window, then one perturbed window per
/// registered point, one active injector at a time under the blast guard.
pub fn run_exploration(cfg: &ExperimentConfig) -> Result<ExplorationOutcome, ControllerError> {
    let run_id = fresh_run_id("expl");
    let run_dir = cfg.experiment_dir.join("exploration").join(&run_id);
    std::fs::create_dir_all(&run_dir)?;
    let steps = trace_steps(cfg)?;
    let timeline_path = run_dir.join("timeline.jsonl");

    let baseline = run_window(
        cfg,
        &run_dir.join("baseline"),
        &format!("{run_id}/baseline"),
        None,
        false,
        steps.as_deref(),
    )?;
    if baseline.points.is_empty() {
        return Err(ControllerError::ExperimentInvalid(
            "target registered no injection points".into(),
        ));
    }

    let mut guard = BlastGuard::new(cfg.max_concurrent_active as usize, None);
    let mut bundles = Vec::new();
    let mut proposed = Vec::new();
    let mut store = HypothesisStore::load(&cfg.experiment_dir.join("hypotheses.db"))
        .map_err(|e| ControllerError::ExperimentInvalid(e.to_string()))?;
    let spec = spec_of(cfg);

    for point in &baseline.points {
        let key = point.key();
        let window_id = format!("{run_id}/{}", sanitize(&key));
        let window_dir = run_dir.join(sanitize(&key));

        guard
            .admit(&point.point_id, cfg.window())
            .map_err(|e| ControllerError::ExperimentInvalid(e.to_string()))?;
        let window_started = Instant::now();
        let result = run_window(cfg, &window_dir, &window_id, Some(&key), true, steps.as_deref());
        guard.release(&point.point_id, window_started.elapsed());
        let result = result?;

        if let Some(a) = &result.activation {
            append_timeline(
                &timeline_path,
                &json!({
                    "window_id": window_id,
                    "point_id": a.point.point_id,
                    "point": a.point.key(),
                    "activate_ms": a.activate_ms,
                    "deadline_ms": a.deadline_ms,
                    "released_ms": a.release_ms,
                }),
            )?;
        }

        let bundle = assemble_bundle(cfg, &baseline, &result, steps.as_deref());
        std::fs::write(
            window_dir.join("bundle.json"),
            serde_json::to_string_pretty(&bundle)?,
        )?;
        if let Classification::Classified { categories } = classify(&bundle, &spec) {
            let new_ids = store
                .propose(&bundle.point, &categories, &window_id, &cfg.app_version)
                .map_err(|e| ControllerError::ExperimentInvalid(e.to_string()))?;
            proposed.extend(new_ids);
        }
        bundles.push(bundle);

        if cfg.cooldown_seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(cfg.cooldown_seconds));
        }
    }

    let report = build_report(&bundles, &spec, &cfg.app_version);
    let report_json_path = run_dir.join("report.json");
    std::fs::write(&report_json_path, render_json(&report))?;
    std::fs::write(run_dir.join("report.txt"), render_text(&report))?;
    std::fs::write(
        run_dir.join("bundles.json"),
        serde_json::to_string_pretty(&bundles)?,
    )?;

    Ok(ExplorationOutcome {
        run_dir,
        bundles,
        report,
        report_json_path,
        proposed,
    })
}

#[derive(Debug)]
pub struct FalsificationOutcome {
    pub run_dir: Option<PathBuf>,
    /// Final status per examined hypothesis.
    pub results: Vec<(HypothesisRecord, HypothesisStatus)>,
}

/// Falsification mode: re-test every accepted hypothesis against the current
/// target build. A hypothesis whose category still holds is validated; one
/// that no longer holds is falsified; one whose point no longer exists is
/// marked not applicable. With nothing accepted this is a no-op.
pub fn run_falsification(cfg: &ExperimentConfig) -> Result<FalsificationOutcome, ControllerError> {
    let store_path = cfg.experiment_dir.join("hypotheses.db");
    let mut store = HypothesisStore::load(&store_path)
        .map_err(|e| ControllerError::ExperimentInvalid(e.to_string()))?;
    let accepted = store.accepted();
    if accepted.is_empty() {
        return Ok(FalsificationOutcome {
            run_dir: None,
            results: Vec::new(),
        });
    }

    let run_id = fresh_run_id("fals");
    let run_dir = cfg.experiment_dir.join("falsification").join(&run_id);
    std::fs::create_dir_all(&run_dir)?;
    let steps = trace_steps(cfg)?;
    let spec = spec_of(cfg);

    let baseline = run_window(
        cfg,
        &run_dir.join("baseline"),
        &format!("{run_id}/baseline"),
        None,
        false,
        steps.as_deref(),
    )?;

    // one perturbed window per distinct point; hypotheses on the same point
    // share it
    let mut by_point: Vec<(PointKey, Vec<HypothesisRecord>)> = Vec::new();
    for record in accepted {
        match by_point.iter_mut().find(|(k, _)| *k == record.point) {
            Some((_, list)) => list.push(record),
            None => by_point.push((record.point.clone(), vec![record])),
        }
    }

    let mut results = Vec::new();
    for (key, hypotheses) in by_point {
        let registered = baseline.points.iter().any(|p| p.key() == key);
        if !registered {
            for h in hypotheses {
                store
                    .record_outcome(&h.id, HypothesisStatus::NotApplicable, &run_id, &cfg.app_version)
                    .map_err(|e| ControllerError::ExperimentInvalid(e.to_string()))?;
                results.push((h, HypothesisStatus::NotApplicable));
            }
            continue;
        }

        let window_id = format!("{run_id}/{}", sanitize(&key));
        let window_dir = run_dir.join(sanitize(&key));
        let result = run_window(cfg, &window_dir, &window_id, Some(&key), false, steps.as_deref())?;
        let bundle = assemble_bundle(cfg, &baseline, &result, steps.as_deref());
        std::fs::write(
            window_dir.join("bundle.json"),
            serde_json::to_string_pretty(&bundle)?,
        )?;
        let categories = match classify(&bundle, &spec) {
            Classification::Classified { categories } => categories,
            Classification::UncoveredUnderPerturbation => Default::default(),
        };

        for h in hypotheses {
            let status = if categories.has(&h.category) {
                HypothesisStatus::Validated
            } else {
                HypothesisStatus::Falsified
            };
            store
                .record_outcome(&h.id, status, &window_id, &cfg.app_version)
                .map_err(|e| ControllerError::ExperimentInvalid(e.to_string()))?;
            results.push((h, status));
        }

        if cfg.cooldown_seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(cfg.cooldown_seconds));
        }
    }

    std::fs::write(
        run_dir.join("falsification.json"),
        serde_json::to_string_pretty(&json!({
            "run_id": run_id,
            "results": results
                .iter()
                .map(|(h, s)| json!({"id": h.id, "category": h.category, "status": s}))
                .collect::<Vec<_>>(),
        }))?,
    )?;

    Ok(FalsificationOutcome {
        run_dir: Some(run_dir),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injection::Location;
    use serde_json::json;

    #[test]
    fn journal_summary_takes_the_last_metrics_record() {
        let records = vec![
            JournalRecord {
                ts: 1,
                kind: RecordKind::Metrics,
                point_id: None,
                payload: json!({
                    "cpu_time_ms": 100, "memory_bytes": 5, "peak_threads": 2,
                    "counters": [], "probes": [], "final": false
                }),
            },
            JournalRecord {
                ts: 2,
                kind: RecordKind::Metrics,
                point_id: None,
                payload: json!({
                    "cpu_time_ms": 250, "memory_bytes": 9, "peak_threads": 3,
                    "counters": [
                        {"point_id": "p0", "active": false, "observation": 41, "perturbed": 1, "fired": 1}
                    ],
                    "probes": [{"probe": "p0.body", "count": 41}],
                    "final": true, "task_completed": true
                }),
            },
        ];
        let summary = summarize_journal(&records);
        assert_eq!(summary.metrics.unwrap().cpu_time_ms, 250);
        assert_eq!(summary.counters[&PointId("p0".into())], (41, 1, 1));
        assert_eq!(summary.probes["p0.body"], 41);
        assert_eq!(summary.task_completed, Some(true));
    }

    #[test]
    fn killed_window_with_null_final_metrics_keeps_last_good_sample() {
        let records = vec![
            JournalRecord {
                ts: 1,
                kind: RecordKind::Metrics,
                point_id: None,
                payload: json!({
                    "cpu_time_ms": 90, "memory_bytes": 1, "peak_threads": 1,
                    "counters": [], "probes": [], "final": false
                }),
            },
            JournalRecord {
                ts: 2,
                kind: RecordKind::Metrics,
                point_id: None,
                payload: json!({
                    "cpu_time_ms": null, "memory_bytes": null, "peak_threads": null,
                    "counters": [], "probes": [], "final": true
                }),
            },
        ];
        let summary = summarize_journal(&records);
        assert_eq!(summary.metrics.unwrap().cpu_time_ms, 90);
    }

    #[test]
    fn sanitized_window_names_are_filesystem_safe() {
        let key = PointKey {
            location: Location::new("PeerExchange$OutgoingThread", "run", 0),
            error_kind: "InterruptedException".to_string(),
            arm_ordinal: 1,
        };
        let name = sanitize(&key);
        assert!(!name.contains('/'));
        assert!(!name.contains(','));
        assert!(name.contains("OutgoingThread"));
    }

    #[test]
    fn console_status_tokens_cover_all_exit_shapes() {
        assert_eq!(console_status_token(&ExitRecord::normal(0)), "0");
        assert_eq!(console_status_token(&ExitRecord::crashed(Some(13))), "13");
        assert_eq!(
            console_status_token(&ExitRecord::stalled_killed(10.0)),
            "killed"
        );
    }
}
