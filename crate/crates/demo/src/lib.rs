//! Shared plumbing for the demo targets: environment-driven instrumentation
//! bootstrap (agent, protocol server, sidecar) and body-side probe counters.
//!
//! Both demo binaries read the same environment contract the controller
//! provides:
//! - `CHAOS_AGENT_ADDR`: address the in-process agent server binds
//! - `CHAOS_JOURNAL`: experiment journal path for the sidecar
//! - `CHAOS_ARTIFACT`: where a bounded task leaves its completion artifact
//! - `CHAOS_SERVICE_ADDR`: where the demo service listens
//! - `CHAOS_VERBOSITY=trace` + `CHAOS_TRACE_FILE`: per-entry trace capture

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chaos_core::injection::{Agent, InjectionDecision, Location, PointId};
use chaos_core::protocol::{AgentServer, ServerOptions};
use chaos_core::telemetry::{Sidecar, SidecarOptions};

/// Body-side execution counters, one per instrumented block, reported to the
/// journal through the sidecar's probe source. A probe counts executions of
/// the protected block *body*; an injection short-circuits the body, so a
/// perturbed window shows probe counts frozen while injections fire.
#[derive(Default)]
pub struct Probes {
    counters: BTreeMap<String, Arc<AtomicU64>>,
}

impl Probes {
    pub fn new(names: &[&str]) -> Self {
        Probes {
            counters: names
                .iter()
                .map(|n| (n.to_string(), Arc::new(AtomicU64::new(0))))
                .collect(),
        }
    }

    pub fn hit(&self, name: &str) {
        if let Some(c) = self.counters.get(name) {
            c.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn get(&self, name: &str) -> u64 {
        self.counters
            .get(name)
            .map_or(0, |c| c.load(Ordering::Relaxed))
    }

    pub fn source(self: &Arc<Self>) -> chaos_core::telemetry::ProbeSource {
        let probes = self.clone();
        Arc::new(move || {
            probes
                .counters
                .iter()
                .map(|(name, c)| (name.clone(), c.load(Ordering::Relaxed)))
                .collect()
        })
    }
}

/// The running instrumentation of one demo target. When the agent is
/// disabled (uninstrumented baseline runs), every block proceeds normally
/// and nothing is monitored.
pub struct Instrumentation {
    pub agent: Option<Agent>,
    server: Option<AgentServer>,
    sidecar: Option<Sidecar>,
}

impl Instrumentation {
    /// Bootstrap from the environment. `no_agent` forces the uninstrumented
    /// path regardless of environment.
    pub fn start(name: &str, probes: &Arc<Probes>, no_agent: bool) -> Instrumentation {
        let agent_addr = std::env::var("CHAOS_AGENT_ADDR").ok();
        if no_agent || agent_addr.is_none() {
            return Instrumentation {
                agent: None,
                server: None,
                sidecar: None,
            };
        }
        let agent = Agent::new();
        if std::env::var("CHAOS_VERBOSITY").as_deref() == Ok("trace") {
            agent.set_trace_entries(true);
        }

        let sidecar = std::env::var("CHAOS_JOURNAL").ok().map(|journal| {
            let opts = SidecarOptions {
                metrics_interval: Duration::from_millis(200),
                trace_path: std::env::var("CHAOS_TRACE_FILE").ok().map(PathBuf::from),
                probe_source: Some(probes.source()),
            };
            Sidecar::attach(&agent, &PathBuf::from(journal), opts)
                .expect("sidecar journal must be writable")
        });

        let server = agent_addr.map(|addr| {
            AgentServer::bind(
                &addr,
                agent.clone(),
                ServerOptions {
                    agent_name: name.to_string(),
                    ..Default::default()
                },
            )
            .expect("agent address must be bindable")
        });

        Instrumentation {
            agent: Some(agent),
            server,
            sidecar,
        }
    }

    /// Register a point; returns `None` on the uninstrumented path.
    pub fn register(&self, unit: &str, routine: &str, block: u32, kind: &str, arm: u32) -> Option<PointId> {
        self.agent.as_ref().map(|a| {
            a.register_point(Location::new(unit, routine, block), kind, arm)
                .expect("demo points are registered once")
        })
    }

    /// Entry hook; uninstrumented blocks always proceed.
    pub fn enter(&self, point: &Option<PointId>) -> InjectionDecision {
        match (&self.agent, point) {
            (Some(agent), Some(id)) => agent.enter_block(id),
            _ => InjectionDecision::Proceed,
        }
    }

    /// Wait briefly for the controller to activate an injector, so a window's
    /// perturbation covers the whole workload. Returns once any injector is
    /// active or the timeout passes (a baseline window has no activation).
    pub fn wait_for_activation(&self, timeout: Duration) {
        let Some(agent) = &self.agent else { return };
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            let any_active = agent.snapshot_all().iter().any(|(_, s)| s.active);
            if any_active {
                return;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    /// Wind down: final journal record, then stop serving.
    pub fn finish(self, task_completed: Option<bool>) {
        if let Some(sidecar) = self.sidecar {
            sidecar.finish(task_completed);
        }
        if let Some(server) = self.server {
            server.shutdown();
        }
    }
}

/// Artifact path for bounded tasks.
pub fn artifact_path() -> Option<PathBuf> {
    std::env::var("CHAOS_ARTIFACT").ok().map(PathBuf::from)
}

/// How long the controller asked the target to wait for an activation
/// before starting its workload (zero when running standalone).
pub fn activation_wait() -> Duration {
    std::env::var("CHAOS_WAIT_ACTIVATION_MS")
        .ok()
        .and_then(|v| v.parse().ok())
        .map_or(Duration::ZERO, Duration::from_millis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_count_hits_per_name() {
        let probes = Arc::new(Probes::new(&["a.b", "c.d"]));
        probes.hit("a.b");
        probes.hit("a.b");
        probes.hit("unknown");
        assert_eq!(probes.get("a.b"), 2);
        assert_eq!(probes.get("c.d"), 0);
        let reported = (probes.source())();
        assert_eq!(reported, vec![("a.b".to_string(), 2), ("c.d".to_string(), 0)]);
    }

    #[test]
    fn uninstrumented_path_always_proceeds() {
        let probes = Arc::new(Probes::new(&[]));
        let instr = Instrumentation::start("t", &probes, true);
        assert!(instr.agent.is_none());
        let point = instr.register("u", "r", 0, "K", 0);
        assert!(point.is_none());
        assert_eq!(instr.enter(&point), InjectionDecision::Proceed);
        instr.finish(None);
    }
}
