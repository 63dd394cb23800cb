//! Chaos engineering toolkit for error-recovery blocks.
//!
//! The toolkit injects synthesized errors at the entry of instrumented
//! recovery blocks in a running application, monitors the reaction through an
//! embedded sidecar, and classifies every covered block as resilient,
//! observable, debuggable or silent. A standalone controller drives three
//! modes (observation, exploration, falsification) over a socket protocol and
//! emits a criticality-sorted resilience report.

pub mod classifier;
pub mod config;
pub mod controller;
pub mod harness;
pub mod injection;
pub mod protocol;
pub mod report;
pub mod telemetry;

use std::time::{SystemTime, UNIX_EPOCH};

/// Wall-clock timestamp in milliseconds since the Unix epoch.
pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
