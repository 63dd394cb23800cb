//! In-process injection agent: registry of interceptable recovery blocks and
//! the entry hook that short-circuits a block with a synthesized error while
//! its injector is active.
//!
//! The host application registers each recovery block once and calls
//! [`Agent::enter_block`] at the top of the protected region. When the
//! injector for that point is active the call returns
//! [`InjectionDecision::Raise`] and the caller must jump straight to the
//! matching recovery arm without executing any statement of the block body.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::unix_millis;

/// Opaque identifier of one injection point, unique within one agent instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointId(pub String);

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Code location of a protected block: unit (class/module), routine, and the
/// ordinal of the block within the routine.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub unit: String,
    pub routine: String,
    pub block_ordinal: u32,
}

impl Location {
    pub fn new(unit: &str, routine: &str, block_ordinal: u32) -> Self {
        Location {
            unit: unit.to_string(),
            routine: routine.to_string(),
            block_ordinal,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{},{}", self.unit, self.routine, self.block_ordinal)
    }
}

/// Version-stable identity of a point: agents regenerate `PointId`s on every
/// restart, so anything persisted across runs is keyed by this triple instead.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointKey {
    pub location: Location,
    pub error_kind: String,
    pub arm_ordinal: u32,
}

impl fmt::Display for PointKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{},{},{}",
            self.location.unit, self.location.routine, self.error_kind, self.arm_ordinal
        )
    }
}

/// One interceptable recovery block paired with one handled error kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPoint {
    pub point_id: PointId,
    pub location: Location,
    pub error_kind: String,
    pub arm_ordinal: u32,
}

impl InjectionPoint {
    pub fn key(&self) -> PointKey {
        PointKey {
            location: self.location.clone(),
            error_kind: self.error_kind.clone(),
            arm_ordinal: self.arm_ordinal,
        }
    }
}

/// The error synthesized when an active injector fires. The message carries a
/// fixed marker so the log scanner can attribute log lines unambiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectedError {
    pub kind: String,
    pub message: String,
}

/// Marker prefix embedded in every synthesized error message.
pub const INJECTION_MARKER: &str = "CHAOS_INJECTED:";

impl InjectedError {
    pub fn new(kind: &str, point_id: &PointId) -> Self {
        InjectedError {
            kind: kind.to_string(),
            message: format!("{INJECTION_MARKER}{point_id}"),
        }
    }

    /// The marker string the log scanner searches for.
    pub fn marker(point_id: &PointId) -> String {
        format!("{INJECTION_MARKER}{point_id}")
    }
}

impl fmt::Display for InjectedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for InjectedError {}

/// Outcome of one block entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InjectionDecision {
    Proceed,
    Raise(InjectedError),
}

impl InjectionDecision {
    pub fn is_raise(&self) -> bool {
        matches!(self, InjectionDecision::Raise(_))
    }
}

/// Point-in-time copy of one injector's state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectorStateSnapshot {
    pub active: bool,
    pub deadline_unix_ms: Option<u64>,
    pub executions_observation: u64,
    pub executions_perturbed: u64,
    pub injections_fired: u64,
}

/// One injection occurrence, with its call-stack capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionEvent {
    pub ts_ms: u64,
    pub point_id: PointId,
    pub stack: Vec<String>,
}

/// Events emitted by the agent to subscribers (sidecar, protocol server).
#[derive(Debug, Clone)]
pub enum AgentEvent {
    Injection(InjectionEvent),
    /// Per-entry trace, emitted only at trace verbosity.
    Entry {
        ts_ms: u64,
        point_id: PointId,
        perturbed: bool,
    },
    Warning {
        ts_ms: u64,
        message: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegisterError {
    #[error("point already registered for this location and arm: {existing}")]
    Duplicate { existing: PointId },
    #[error("error_kind must not be empty")]
    EmptyErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("unknown point id: {0}")]
    UnknownPoint(PointId),
    #[error("activation duration must be greater than zero")]
    ZeroDuration,
}

/// Optional per-point override: decides at each entry whether an active
/// injector actually fires. Ships unset.
pub type InjectHook = Arc<dyn Fn(&InjectionPoint) -> bool + Send + Sync>;

struct PointSlot {
    point: InjectionPoint,
    active: AtomicBool,
    deadline: Mutex<Option<Instant>>,
    deadline_unix_ms: AtomicU64, // 0 = none
    executions_observation: AtomicU64,
    executions_perturbed: AtomicU64,
    injections_fired: AtomicU64,
    hook: Mutex<Option<InjectHook>>,
}

struct AgentInner {
    slots: RwLock<Vec<Arc<PointSlot>>>,
    by_id: RwLock<HashMap<PointId, usize>>,
    by_key: RwLock<HashMap<(Location, u32), usize>>,
    subscribers: Mutex<Vec<Sender<AgentEvent>>>,
    trace_entries: AtomicBool,
    unknown_point_warnings: AtomicU64,
}

/// Thread-safe in-process injection agent. Cloning shares the same registry.
#[derive(Clone)]
pub struct Agent {
    inner: Arc<AgentInner>,
}

impl Default for Agent {
    fn default() -> Self {
        Self::new()
    }
}

impl Agent {
    pub fn new() -> Self {
        Agent {
            inner: Arc::new(AgentInner {
                slots: RwLock::new(Vec::new()),
                by_id: RwLock::new(HashMap::new()),
                by_key: RwLock::new(HashMap::new()),
                subscribers: Mutex::new(Vec::new()),
                trace_entries: AtomicBool::new(false),
                unknown_point_warnings: AtomicU64::new(0),
            }),
        }
    }

    /// Enable per-entry trace events (exploration-mode full verbosity).
    pub fn set_trace_entries(&self, on: bool) {
        self.inner.trace_entries.store(on, Ordering::Relaxed);
    }

    /// Subscribe to agent events. Each subscriber gets every event from the
    /// subscription onwards; dead receivers are pruned on the next emit.
    pub fn subscribe(&self) -> Receiver<AgentEvent> {
        let (tx, rx) = mpsc::channel();
        self.inner.subscribers.lock().unwrap().push(tx);
        rx
    }

    fn emit(&self, event: AgentEvent) {
        let mut subs = self.inner.subscribers.lock().unwrap();
        subs.retain(|tx| tx.send(event.clone()).is_ok());
    }

    pub fn register_point(
        &self,
        location: Location,
        error_kind: &str,
        arm_ordinal: u32,
    ) -> Result<PointId, RegisterError> {
        if error_kind.is_empty() {
            return Err(RegisterError::EmptyErrorKind);
        }
        let mut slots = self.inner.slots.write().unwrap();
        let mut by_key = self.inner.by_key.write().unwrap();
        let key = (location.clone(), arm_ordinal);
        if let Some(&idx) = by_key.get(&key) {
            return Err(RegisterError::Duplicate {
                existing: slots[idx].point.point_id.clone(),
            });
        }
        let point_id = PointId(format!("p{}", slots.len()));
        let slot = Arc::new(PointSlot {
            point: InjectionPoint {
                point_id: point_id.clone(),
                location,
                error_kind: error_kind.to_string(),
                arm_ordinal,
            },
            active: AtomicBool::new(false),
            deadline: Mutex::new(None),
            deadline_unix_ms: AtomicU64::new(0),
            executions_observation: AtomicU64::new(0),
            executions_perturbed: AtomicU64::new(0),
            injections_fired: AtomicU64::new(0),
            hook: Mutex::new(None),
        });
        let idx = slots.len();
        slots.push(slot);
        by_key.insert(key, idx);
        self.inner
            .by_id
            .write()
            .unwrap()
            .insert(point_id.clone(), idx);
        Ok(point_id)
    }

    /// Install the optional fire-override predicate for a point.
    pub fn set_inject_hook(&self, point_id: &PointId, hook: Option<InjectHook>) -> Result<(), AgentError> {
        let slot = self
            .slot(point_id)
            .ok_or_else(|| AgentError::UnknownPoint(point_id.clone()))?;
        *slot.hook.lock().unwrap() = hook;
        Ok(())
    }

    fn slot(&self, point_id: &PointId) -> Option<Arc<PointSlot>> {
        let by_id = self.inner.by_id.read().unwrap();
        let idx = *by_id.get(point_id)?;
        Some(self.inner.slots.read().unwrap()[idx].clone())
    }

    /// Entry hook for a protected block. Never panics and never blocks the
    /// host on an unknown id: fail-open with a warning event, because a chaos
    /// tool must not be the crash cause outside an experiment.
    pub fn enter_block(&self, point_id: &PointId) -> InjectionDecision {
        let Some(slot) = self.slot(point_id) else {
            self.inner
                .unknown_point_warnings
                .fetch_add(1, Ordering::Relaxed);
            self.emit(AgentEvent::Warning {
                ts_ms: unix_millis(),
                message: format!("enter_block on unknown point {point_id}"),
            });
            return InjectionDecision::Proceed;
        };

        let active = slot.active.load(Ordering::Acquire) && !Self::expire_if_due(&slot);
        if active {
            let fire = {
                let hook = slot.hook.lock().unwrap();
                hook.as_ref().map_or(true, |h| h(&slot.point))
            };
            slot.executions_perturbed.fetch_add(1, Ordering::Relaxed);
            if fire {
                slot.injections_fired.fetch_add(1, Ordering::Relaxed);
                let event = InjectionEvent {
                    ts_ms: unix_millis(),
                    point_id: slot.point.point_id.clone(),
                    stack: capture_stack(),
                };
                self.emit(AgentEvent::Injection(event));
                if self.inner.trace_entries.load(Ordering::Relaxed) {
                    self.emit(AgentEvent::Entry {
                        ts_ms: unix_millis(),
                        point_id: slot.point.point_id.clone(),
                        perturbed: true,
                    });
                }
                return InjectionDecision::Raise(InjectedError::new(
                    &slot.point.error_kind,
                    &slot.point.point_id,
                ));
            }
        } else {
            slot.executions_observation.fetch_add(1, Ordering::Relaxed);
        }
        if self.inner.trace_entries.load(Ordering::Relaxed) {
            self.emit(AgentEvent::Entry {
                ts_ms: unix_millis(),
                point_id: slot.point.point_id.clone(),
                perturbed: active,
            });
        }
        InjectionDecision::Proceed
    }

    /// Returns true (and flips the flag off) when the activation deadline has
    /// passed.
    fn expire_if_due(slot: &PointSlot) -> bool {
        let mut deadline = slot.deadline.lock().unwrap();
        match *deadline {
            Some(d) if Instant::now() > d => {
                slot.active.store(false, Ordering::Release);
                slot.deadline_unix_ms.store(0, Ordering::Relaxed);
                *deadline = None;
                true
            }
            Some(_) => false,
            None => {
                // active with no deadline should not happen; fail safe
                slot.active.store(false, Ordering::Release);
                true
            }
        }
    }

    /// Activate or deactivate one injector. Activation auto-expires at the
    /// deadline even if no further command arrives; deactivation is
    /// idempotent.
    pub fn set_active(
        &self,
        point_id: &PointId,
        active: bool,
        duration: Duration,
    ) -> Result<InjectorStateSnapshot, AgentError> {
        let slot = self
            .slot(point_id)
            .ok_or_else(|| AgentError::UnknownPoint(point_id.clone()))?;
        if active {
            if duration.is_zero() {
                return Err(AgentError::ZeroDuration);
            }
            let mut deadline = slot.deadline.lock().unwrap();
            *deadline = Some(Instant::now() + duration);
            slot.deadline_unix_ms
                .store(unix_millis() + duration.as_millis() as u64, Ordering::Relaxed);
            slot.active.store(true, Ordering::Release);
        } else {
            let mut deadline = slot.deadline.lock().unwrap();
            *deadline = None;
            slot.deadline_unix_ms.store(0, Ordering::Relaxed);
            slot.active.store(false, Ordering::Release);
        }
        Ok(Self::snapshot_slot(&slot))
    }

    fn snapshot_slot(slot: &PointSlot) -> InjectorStateSnapshot {
        if slot.active.load(Ordering::Acquire) {
            Self::expire_if_due(slot);
        }
        let deadline_ms = slot.deadline_unix_ms.load(Ordering::Relaxed);
        InjectorStateSnapshot {
            active: slot.active.load(Ordering::Acquire),
            deadline_unix_ms: if deadline_ms == 0 { None } else { Some(deadline_ms) },
            executions_observation: slot.executions_observation.load(Ordering::Relaxed),
            executions_perturbed: slot.executions_perturbed.load(Ordering::Relaxed),
            injections_fired: slot.injections_fired.load(Ordering::Relaxed),
        }
    }

    pub fn snapshot_counters(
        &self,
        point_id: &PointId,
    ) -> Result<InjectorStateSnapshot, AgentError> {
        let slot = self
            .slot(point_id)
            .ok_or_else(|| AgentError::UnknownPoint(point_id.clone()))?;
        Ok(Self::snapshot_slot(&slot))
    }

    pub fn snapshot_all(&self) -> Vec<(PointId, InjectorStateSnapshot)> {
        let slots = self.inner.slots.read().unwrap();
        slots
            .iter()
            .map(|s| (s.point.point_id.clone(), Self::snapshot_slot(s)))
            .collect()
    }

    pub fn points(&self) -> Vec<InjectionPoint> {
        let slots = self.inner.slots.read().unwrap();
        slots.iter().map(|s| s.point.clone()).collect()
    }

    pub fn find_point(&self, key: &PointKey) -> Option<InjectionPoint> {
        self.points().into_iter().find(|p| &p.key() == key)
    }

    pub fn unknown_point_warnings(&self) -> u64 {
        self.inner.unknown_point_warnings.load(Ordering::Relaxed)
    }
}

/// Capture the injection call stack. Frames stay unresolved by default:
/// symbolization parses the whole debug-info section and costs tens of
/// megabytes of resident memory, which would distort the metrics of the very
/// process under observation. `CHAOS_SYMBOLIZE=1` opts into resolved names.
fn capture_stack() -> Vec<String> {
    let symbolize = std::env::var("CHAOS_SYMBOLIZE").as_deref() == Ok("1");
    let mut stack = Vec::new();
    backtrace::trace(|frame| {
        if symbolize {
            backtrace::resolve_frame(frame, |symbol| {
                let name = symbol
                    .name()
                    .map_or_else(|| "<unknown>".to_string(), |n| n.to_string());
                stack.push(format!("{:p} {name}", frame.ip()));
            });
            if stack.is_empty() {
                stack.push(format!("{:p}", frame.ip()));
            }
        } else {
            stack.push(format!("{:p}", frame.ip()));
        }
        stack.len() < 24
    });
    stack
}
