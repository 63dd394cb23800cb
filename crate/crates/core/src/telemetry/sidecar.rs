//! The sidecar worker: drains agent events into the experiment journal and
//! samples process metrics on a periodic schedule, independent of experiment
//! commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::json;

use crate::injection::{Agent, AgentEvent};
use crate::telemetry::journal::{JournalRecord, JournalWriter, RecordKind};
use crate::telemetry::metrics::sample_self;
use crate::unix_millis;

/// Supplies body-side probe counters of the host application, reported with
/// every metrics record.
pub type ProbeSource = Arc<dyn Fn() -> Vec<(String, u64)> + Send + Sync>;

pub struct SidecarOptions {
    pub metrics_interval: Duration,
    /// Per-entry trace file, written only at full verbosity (the agent must
    /// also have trace entries enabled). Separate from the journal.
    pub trace_path: Option<PathBuf>,
    pub probe_source: Option<ProbeSource>,
}

impl Default for SidecarOptions {
    fn default() -> Self {
        SidecarOptions {
            metrics_interval: Duration::from_secs(1),
            trace_path: None,
            probe_source: None,
        }
    }
}

pub struct Sidecar {
    journal: Arc<JournalWriter>,
    agent: Agent,
    probe_source: Option<ProbeSource>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl Sidecar {
    /// Attach to an agent: subscribes to its events and starts the journal
    /// worker thread.
    pub fn attach(agent: &Agent, journal_path: &Path, opts: SidecarOptions) -> std::io::Result<Self> {
        let journal = Arc::new(JournalWriter::create(journal_path)?);
        let events = agent.subscribe();
        let stop = Arc::new(AtomicBool::new(false));

        let worker = {
            let journal = journal.clone();
            let agent = agent.clone();
            let stop = stop.clone();
            let probe_source = opts.probe_source.clone();
            let interval = opts.metrics_interval;
            let mut trace = match &opts.trace_path {
                Some(p) => Some(BufWriter::new(File::create(p)?)),
                None => None,
            };
            std::thread::spawn(move || {
                let mut next_tick = Instant::now() + interval;
                loop {
                    let now = Instant::now();
                    if now >= next_tick {
                        write_metrics_record(&journal, &agent, probe_source.as_ref(), false, None);
                        next_tick = now + interval;
                    }
                    // short poll quantum so a shutdown request is noticed
                    // promptly even while idle
                    let wait = next_tick.saturating_duration_since(Instant::now());
                    match events.recv_timeout(wait.min(Duration::from_millis(10))) {
                        Ok(AgentEvent::Injection(ev)) => {
                            journal.append(&JournalRecord {
                                ts: ev.ts_ms,
                                kind: RecordKind::Injection,
                                point_id: Some(ev.point_id.clone()),
                                payload: json!({ "stack": ev.stack }),
                            });
                        }
                        Ok(AgentEvent::Entry { ts_ms, point_id, perturbed }) => {
                            if let Some(t) = trace.as_mut() {
                                let _ = writeln!(t, "{ts_ms} {point_id} perturbed={perturbed}");
                                let _ = t.flush();
                            }
                        }
                        Ok(AgentEvent::Warning { .. }) => {}
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                    if stop.load(Ordering::Relaxed) {
                        // drain whatever is already queued
                        while let Ok(ev) = events.try_recv() {
                            if let AgentEvent::Injection(ev) = ev {
                                journal.append(&JournalRecord {
                                    ts: ev.ts_ms,
                                    kind: RecordKind::Injection,
                                    point_id: Some(ev.point_id.clone()),
                                    payload: json!({ "stack": ev.stack }),
                                });
                            }
                        }
                        break;
                    }
                }
            })
        };

        Ok(Sidecar {
            journal,
            agent: agent.clone(),
            probe_source: opts.probe_source,
            stop,
            worker: Some(worker),
        })
    }

    /// Stop the worker and write the final metrics record, carrying the
    /// task-completion flag when the host is a bounded task.
    pub fn finish(mut self, task_completed: Option<bool>) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
        write_metrics_record(
            &self.journal,
            &self.agent,
            self.probe_source.as_ref(),
            true,
            task_completed,
        );
    }
}

fn write_metrics_record(
    journal: &JournalWriter,
    agent: &Agent,
    probe_source: Option<&ProbeSource>,
    fin: bool,
    task_completed: Option<bool>,
) {
    let metrics = sample_self().ok();
    let counters: Vec<_> = agent
        .snapshot_all()
        .into_iter()
        .map(|(id, s)| {
            json!({
                "point_id": id,
                "active": s.active,
                "observation": s.executions_observation,
                "perturbed": s.executions_perturbed,
                "fired": s.injections_fired,
            })
        })
        .collect();
    let probes: Vec<_> = probe_source
        .map(|src| src())
        .unwrap_or_default()
        .into_iter()
        .map(|(name, count)| json!({ "probe": name, "count": count }))
        .collect();
    let mut payload = json!({
        "cpu_time_ms": metrics.map(|m| m.cpu_time_ms),
        "memory_bytes": metrics.map(|m| m.memory_bytes),
        "peak_threads": metrics.map(|m| m.peak_threads),
        "counters": counters,
        "probes": probes,
        "final": fin,
    });
    if let Some(done) = task_completed {
        payload["task_completed"] = json!(done);
    }
    journal.append(&JournalRecord {
        ts: unix_millis(),
        kind: RecordKind::Metrics,
        point_id: None,
        payload,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injection::Location;
    use crate::telemetry::journal::read_journal;

    #[test]
    fn injection_events_land_in_journal_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let agent = Agent::new();
        let id = agent
            .register_point(Location::new("PeerExchange", "send", 0), "InterruptedException", 0)
            .unwrap();
        let sidecar = Sidecar::attach(&agent, &path, SidecarOptions::default()).unwrap();
        agent
            .set_active(&id, true, Duration::from_secs(10))
            .unwrap();
        for _ in 0..210 {
            assert!(agent.enter_block(&id).is_raise());
        }
        sidecar.finish(Some(false));
        let records = read_journal(&path).unwrap();
        let injections: Vec<_> = records
            .iter()
            .filter(|r| r.kind == RecordKind::Injection)
            .collect();
        assert_eq!(injections.len(), 210);
        assert!(injections.windows(2).all(|w| w[0].ts <= w[1].ts));
        assert!(injections
            .iter()
            .all(|r| r.point_id.as_ref() == Some(&id)));
        assert!(!injections[0].payload["stack"].as_array().unwrap().is_empty());
    }

    #[test]
    fn no_events_yield_no_injection_records_but_final_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let agent = Agent::new();
        let sidecar = Sidecar::attach(&agent, &path, SidecarOptions::default()).unwrap();
        sidecar.finish(Some(true));
        let records = read_journal(&path).unwrap();
        assert!(records.iter().all(|r| r.kind != RecordKind::Injection));
        let fin = records
            .iter()
            .rfind(|r| r.kind == RecordKind::Metrics)
            .expect("final metrics record");
        assert_eq!(fin.payload["task_completed"], serde_json::json!(true));
        assert_eq!(fin.payload["final"], serde_json::json!(true));
    }

    #[test]
    fn probe_counts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let agent = Agent::new();
        let opts = SidecarOptions {
            probe_source: Some(Arc::new(|| vec![("body0".to_string(), 7u64)])),
            ..Default::default()
        };
        let sidecar = Sidecar::attach(&agent, &path, opts).unwrap();
        sidecar.finish(None);
        let records = read_journal(&path).unwrap();
        let fin = records.last().unwrap();
        assert_eq!(fin.payload["probes"][0]["probe"], "body0");
        assert_eq!(fin.payload["probes"][0]["count"], 7);
    }
}
