//! Monitoring sidecar embedded with the agent: experiment journal, system
//! metrics sampling, application-log scanning, behavior digests and exit
//! records.

mod digest;
mod exit;
mod journal;
mod logscan;
mod metrics;
mod sidecar;

pub use digest::{digest_behavior, ComparatorError, ComparatorId, BehaviorDigest, Transcript};
pub use exit::{ExitRecord, ExitStatus};
pub use journal::{read_journal, JournalRecord, JournalWriter, RecordKind};
pub use logscan::{scan_logs, LogEvidence, LogSink, MatchRule};
pub use metrics::{
    diff_metrics, sample_process, sample_self, FieldDelta, MetricsDelta, MetricsError,
    MetricsSnapshot, DEFAULT_METRICS_THRESHOLD,
};
pub use sidecar::{ProbeSource, Sidecar, SidecarOptions};
