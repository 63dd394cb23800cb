//! Process metrics sampling (Linux procfs) and baseline/perturbed deltas.

use std::fs;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::unix_millis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    /// Milliseconds of process CPU time (user + system).
    pub cpu_time_ms: u64,
    /// Resident set size in bytes.
    pub memory_bytes: u64,
    /// Peak thread count observed so far for this process.
    pub peak_threads: u64,
    /// Wall-clock timestamp of the sample, unix milliseconds.
    pub wall_clock_ms: u64,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("process {pid} not sampleable (dead or inaccessible)")]
    ProcessDead { pid: u32 },
    #[error("malformed procfs data for process {pid}")]
    Malformed { pid: u32 },
}

static PEAK_THREADS: AtomicU64 = AtomicU64::new(0);

/// Sample the calling process. Peak thread count is tracked across calls.
pub fn sample_self() -> Result<MetricsSnapshot, MetricsError> {
    let pid = std::process::id();
    let mut snap = sample_process(pid)?;
    let peak = PEAK_THREADS.fetch_max(snap.peak_threads, Ordering::Relaxed);
    snap.peak_threads = snap.peak_threads.max(peak);
    Ok(snap)
}

/// Sample an arbitrary live process by pid. A dead process is a sampling
/// error, distinct from zero readings.
pub fn sample_process(pid: u32) -> Result<MetricsSnapshot, MetricsError> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat"))
        .map_err(|_| MetricsError::ProcessDead { pid })?;
    let status = fs::read_to_string(format!("/proc/{pid}/status"))
        .map_err(|_| MetricsError::ProcessDead { pid })?;

    // fields after the parenthesized comm; utime/stime are fields 14/15 (1-based)
    let after_comm = stat
        .rsplit_once(')')
        .map(|(_, rest)| rest)
        .ok_or(MetricsError::Malformed { pid })?;
    let fields: Vec<&str> = after_comm.split_whitespace().collect();
    if fields.len() < 13 {
        return Err(MetricsError::Malformed { pid });
    }
    let utime: u64 = fields[11].parse().map_err(|_| MetricsError::Malformed { pid })?;
    let stime: u64 = fields[12].parse().map_err(|_| MetricsError::Malformed { pid })?;
    let ticks_per_sec = unsafe { libc::sysconf(libc::_SC_CLK_TCK) } as u64;
    let cpu_time_ms = (utime + stime) * 1000 / ticks_per_sec.max(1);

    let mut memory_bytes = 0u64;
    let mut threads = 0u64;
    for line in status.lines() {
        if let Some(v) = line.strip_prefix("VmRSS:") {
            memory_bytes = parse_kb(v) * 1024;
        } else if let Some(v) = line.strip_prefix("Threads:") {
            threads = v.trim().parse().unwrap_or(0);
        }
    }

    Ok(MetricsSnapshot {
        cpu_time_ms,
        memory_bytes,
        peak_threads: threads,
        wall_clock_ms: unix_millis(),
    })
}

fn parse_kb(v: &str) -> u64 {
    v.trim()
        .trim_end_matches(" kB")
        .trim()
        .parse()
        .unwrap_or(0)
}

/// Relative change of one metric field between baseline and perturbed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldDelta {
    pub baseline: f64,
    pub perturbed: f64,
    pub relative: f64,
    pub abnormal: bool,
}

impl FieldDelta {
    fn compute(baseline: f64, perturbed: f64, threshold: f64, floor: f64) -> Self {
        let relative = if baseline > 0.0 {
            (perturbed - baseline) / baseline
        } else if perturbed > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        // Only increases count as abnormal (cpu+ / mem+ / threads+). The
        // relative threshold alone is meaningless near zero (a 5 ms baseline
        // makes any jitter look like a 10x regression), so an increase must
        // also clear an absolute floor before it is flagged.
        FieldDelta {
            baseline,
            perturbed,
            relative,
            abnormal: relative > threshold && (perturbed - baseline) > floor,
        }
    }
}

/// Per-field relative change plus abnormality flags, or `Unavailable` when
/// the perturbed run died before a comparable sample existed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricsDelta {
    Unavailable,
    Compared {
        cpu: FieldDelta,
        memory: FieldDelta,
        threads: FieldDelta,
    },
}

impl MetricsDelta {
    pub fn any_abnormal(&self) -> bool {
        match self {
            MetricsDelta::Unavailable => false,
            MetricsDelta::Compared { cpu, memory, threads } => {
                cpu.abnormal || memory.abnormal || threads.abnormal
            }
        }
    }

    /// Human-facing flags in the report's "Sys. metrics" column style.
    pub fn flags(&self) -> Vec<&'static str> {
        match self {
            MetricsDelta::Unavailable => vec![],
            MetricsDelta::Compared { cpu, memory, threads } => {
                let mut flags = Vec::new();
                if cpu.abnormal {
                    flags.push("cpu+");
                }
                if memory.abnormal {
                    flags.push("mem+");
                }
                if threads.abnormal {
                    flags.push("threads+");
                }
                flags
            }
        }
    }
}

/// Default relative-change threshold above which a field is flagged abnormal.
pub const DEFAULT_METRICS_THRESHOLD: f64 = 0.25;

/// Absolute-increase floors: an increase below the floor is never abnormal,
/// whatever the relative change. Short runs have near-zero CPU baselines and
/// a few megabytes of RSS noise; these floors keep that jitter out of the
/// verdict while still catching real regressions (hundreds of ms of CPU,
/// tens of megabytes, runaway thread creation).
pub const CPU_ABNORMAL_FLOOR_MS: f64 = 250.0;
pub const MEMORY_ABNORMAL_FLOOR_BYTES: f64 = 16.0 * 1024.0 * 1024.0;
pub const THREADS_ABNORMAL_FLOOR: f64 = 2.0;

pub fn diff_metrics(
    baseline: &MetricsSnapshot,
    perturbed: &MetricsSnapshot,
    threshold: f64,
) -> MetricsDelta {
    MetricsDelta::Compared {
        cpu: FieldDelta::compute(
            baseline.cpu_time_ms as f64,
            perturbed.cpu_time_ms as f64,
            threshold,
            CPU_ABNORMAL_FLOOR_MS,
        ),
        memory: FieldDelta::compute(
            baseline.memory_bytes as f64,
            perturbed.memory_bytes as f64,
            threshold,
            MEMORY_ABNORMAL_FLOOR_BYTES,
        ),
        threads: FieldDelta::compute(
            baseline.peak_threads as f64,
            perturbed.peak_threads as f64,
            threshold,
            THREADS_ABNORMAL_FLOOR,
        ),
    }
}
