//! Turns the evidence gathered for one recovery block under perturbation
//! into the set of satisfied hypothesis categories: resilient, observable,
//! debuggable, silent.
//!
//! Category logic:
//! - behavior is "as expected" when the domain outcome holds, the process
//!   exited normally and every replayed interaction matched the baseline;
//! - resilient additionally requires steady system metrics and no
//!   user-visible deviation;
//! - observable means the user perceived the failure (crash, status change,
//!   error content; for request/response domains also a stall);
//! - debuggable means log evidence or abnormal metrics;
//! - silent means expected behavior was not provided yet nothing user-visible
//!   or logged points at the failure. Metrics-only abnormality does not
//!   rescue a block from silence, so a block can be both debuggable and
//!   silent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::injection::{PointId, PointKey};
use crate::telemetry::{ComparatorId, ExitRecord, ExitStatus, LogEvidence, MetricsDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecCounts {
    pub observation: u64,
    pub perturbed: u64,
    pub injections_fired: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionOutcome {
    Equal,
    Different,
    Missing,
}

/// Baseline-vs-perturbed comparison of one replayed interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionDiff {
    pub interaction_id: String,
    pub outcome: InteractionOutcome,
    /// The domain outcome code changed (e.g. 200 -> 302, exit 0 -> 13).
    pub status_changed: bool,
    /// The output surfaced a user-facing error (error page, console error).
    pub error_indicator: bool,
}

impl InteractionDiff {
    pub fn equal(id: &str) -> Self {
        InteractionDiff {
            interaction_id: id.to_string(),
            outcome: InteractionOutcome::Equal,
            status_changed: false,
            error_indicator: false,
        }
    }
}

/// Everything observed about one point in one experiment window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub point: PointKey,
    pub point_id: PointId,
    pub window_id: String,
    pub counts: ExecCounts,
    pub log_evidence: LogEvidence,
    pub metrics_delta: MetricsDelta,
    pub digest_diff: Vec<InteractionDiff>,
    pub exit: ExitRecord,
    /// Domain task-completion flag, when the target is a bounded task.
    pub task_completed: Option<bool>,
}

/// The pluggable definition of "behavior equivalence" and "visible failure"
/// for an application domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecPreset {
    /// Bounded command-line task: the task must complete and the process
    /// exit normally; a hang is not user-visible.
    CliTask,
    /// Request/response service: every replayed interaction must match the
    /// baseline; status changes, error content and stalls are user-visible.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateSpec {
    pub preset: SpecPreset,
    pub comparator: ComparatorId,
}

impl SteadyStateSpec {
    pub fn cli_task() -> Self {
        SteadyStateSpec {
            preset: SpecPreset::CliTask,
            comparator: ComparatorId::Verbatim,
        }
    }

    pub fn http(comparator: ComparatorId) -> Self {
        SteadyStateSpec {
            preset: SpecPreset::Http,
            comparator,
        }
    }
}

pub type Category = &'static str;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySet {
    pub resilient: bool,
    pub observable: bool,
    pub debuggable: bool,
    pub silent: bool,
    pub notes: Vec<String>,
}

impl CategorySet {
    pub fn categories(&self) -> Vec<Category> {
        let mut cats = Vec::new();
        if self.resilient {
            cats.push("resilient");
        }
        if self.observable {
            cats.push("observable");
        }
        if self.debuggable {
            cats.push("debuggable");
        }
        if self.silent {
            cats.push("silent");
        }
        cats
    }

    pub fn has(&self, category: &str) -> bool {
        match category {
            "resilient" => self.resilient,
            "observable" => self.observable,
            "debuggable" => self.debuggable,
            "silent" => self.silent,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Classification {
    Classified { categories: CategorySet },
    /// The point was covered in observation but never entered while its
    /// injector was active; there is nothing to classify.
    UncoveredUnderPerturbation,
}

impl Classification {
    pub fn categories(&self) -> Option<&CategorySet> {
        match self {
            Classification::Classified { categories } => Some(categories),
            Classification::UncoveredUnderPerturbation => None,
        }
    }
}

fn all_digests_equal(bundle: &EvidenceBundle) -> bool {
    bundle
        .digest_diff
        .iter()
        .all(|d| d.outcome == InteractionOutcome::Equal)
}

fn any_visible_interaction(bundle: &EvidenceBundle) -> bool {
    bundle
        .digest_diff
        .iter()
        .any(|d| d.status_changed || d.error_indicator)
}

fn outcome_holds(bundle: &EvidenceBundle, spec: &SteadyStateSpec) -> bool {
    match spec.preset {
        SpecPreset::CliTask => {
            bundle.task_completed == Some(true) && bundle.exit.status == ExitStatus::Normal
        }
        SpecPreset::Http => bundle.exit.status == ExitStatus::Normal && all_digests_equal(bundle),
    }
}

fn visibility_holds(bundle: &EvidenceBundle, spec: &SteadyStateSpec) -> bool {
    match spec.preset {
        // a hung CLI task is not user-visible; a crash or an error surfaced
        // on the user channel is
        SpecPreset::CliTask => {
            bundle.exit.status == ExitStatus::Crashed || any_visible_interaction(bundle)
        }
        SpecPreset::Http => {
            bundle.exit.status != ExitStatus::Normal
                || any_visible_interaction(bundle)
                || bundle
                    .digest_diff
                    .iter()
                    .any(|d| d.outcome == InteractionOutcome::Missing)
        }
    }
}

/// Pure function of (bundle, spec).
pub fn classify(bundle: &EvidenceBundle, spec: &SteadyStateSpec) -> Classification {
    if bundle.counts.injections_fired == 0 {
        return Classification::UncoveredUnderPerturbation;
    }

    let behavior_ok = outcome_holds(bundle, spec)
        && bundle.exit.status == ExitStatus::Normal
        && all_digests_equal(bundle);
    let observable = visibility_holds(bundle, spec);
    let metrics_abnormal = bundle.metrics_delta.any_abnormal();
    let logged = bundle.log_evidence.matched;

    let resilient = behavior_ok && !metrics_abnormal && !observable;
    let debuggable = logged || metrics_abnormal;
    let silent = !behavior_ok && !observable && !logged;

    let mut notes = Vec::new();
    notes.push(format!("exit={:?}", bundle.exit.status));
    if logged {
        notes.push(format!("log={:?}", bundle.log_evidence.match_rule));
    }
    for flag in bundle.metrics_delta.flags() {
        notes.push(format!("metrics={flag}"));
    }
    if !all_digests_equal(bundle) {
        notes.push("behavior=diff".to_string());
    }
    if bundle.task_completed == Some(false) {
        notes.push("task=incomplete".to_string());
    }

    Classification::Classified {
        categories: CategorySet {
            resilient,
            observable,
            debuggable,
            silent,
            notes,
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub covered: usize,
    pub resilient: usize,
    pub observable: usize,
    pub debuggable: usize,
    pub silent: usize,
}

impl CategoryCounts {
    fn add(&mut self, set: &CategorySet) {
        self.covered += 1;
        self.resilient += set.resilient as usize;
        self.observable += set.observable as usize;
        self.debuggable += set.debuggable as usize;
        self.silent += set.silent as usize;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub totals: CategoryCounts,
    pub by_unit: BTreeMap<String, CategoryCounts>,
    pub uncovered: usize,
}

/// Aggregate counts per category and per unit grouping.
pub fn classify_corpus(bundles: &[EvidenceBundle], spec: &SteadyStateSpec) -> CorpusSummary {
    let mut summary = CorpusSummary::default();
    for bundle in bundles {
        match classify(bundle, spec) {
            Classification::Classified { categories } => {
                summary.totals.add(&categories);
                summary
                    .by_unit
                    .entry(unit_group(&bundle.point.location.unit))
                    .or_default()
                    .add(&categories);
            }
            Classification::UncoveredUnderPerturbation => summary.uncovered += 1,
        }
    }
    summary
}

/// Grouping key: package-style prefix of the unit name when present.
fn unit_group(unit: &str) -> String {
    match unit.rsplit_once('.') {
        Some((prefix, _)) => prefix.to_string(),
        None => unit.to_string(),
    }
}

#[cfg(test)]
pub mod test_support {
    use super::*;
    use crate::injection::Location;

    /// Build a synthetic bundle from the coarse evidence tuple used by the
    /// enumeration and transcription tests.
    pub fn bundle(
        name: &str,
        exit: ExitRecord,
        logged: bool,
        metrics_abnormal: bool,
        digests_equal: bool,
        task_completed: bool,
    ) -> EvidenceBundle {
        let point_id = PointId(format!("p-{name}"));
        EvidenceBundle {
            point: PointKey {
                location: Location::new(name, "routine", 0),
                error_kind: "Err".into(),
                arm_ordinal: 0,
            },
            point_id: point_id.clone(),
            window_id: "w0".into(),
            counts: ExecCounts {
                observation: 1,
                perturbed: 1,
                injections_fired: 1,
            },
            log_evidence: LogEvidence {
                point_id,
                matched: logged,
                sample_lines: if logged { vec!["line".into()] } else { vec![] },
                match_rule: logged.then_some(crate::telemetry::MatchRule::Marker),
                diagnostic: None,
            },
            metrics_delta: if metrics_abnormal {
                crate::telemetry::diff_metrics(
                    &crate::telemetry::MetricsSnapshot {
                        cpu_time_ms: 100,
                        memory_bytes: 100,
                        peak_threads: 10,
                        wall_clock_ms: 0,
                    },
                    &crate::telemetry::MetricsSnapshot {
                        cpu_time_ms: 1000,
                        memory_bytes: 100,
                        peak_threads: 10,
                        wall_clock_ms: 1,
                    },
                    0.25,
                )
            } else {
                crate::telemetry::diff_metrics(
                    &crate::telemetry::MetricsSnapshot {
                        cpu_time_ms: 100,
                        memory_bytes: 100,
                        peak_threads: 10,
                        wall_clock_ms: 0,
                    },
                    &crate::telemetry::MetricsSnapshot {
                        cpu_time_ms: 100,
                        memory_bytes: 100,
                        peak_threads: 10,
                        wall_clock_ms: 1,
                    },
                    0.25,
                )
            },
            digest_diff: vec![if digests_equal {
                InteractionDiff::equal("i0")
            } else {
                InteractionDiff {
                    interaction_id: "i0".into(),
                    outcome: InteractionOutcome::Different,
                    status_changed: false,
                    error_indicator: false,
                }
            }],
            exit,
            task_completed: Some(task_completed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::bundle;
    use super::*;

    fn cats(b: &EvidenceBundle, spec: &SteadyStateSpec) -> CategorySet {
        classify(b, spec).categories().unwrap().clone()
    }

    #[test]
    fn crashed_and_logged_is_observable_and_debuggable() {
        let b = bundle("BEValue", ExitRecord::crashed(Some(1)), true, false, false, false);
        let c = cats(&b, &SteadyStateSpec::cli_task());
        assert!(c.observable && c.debuggable);
        assert!(!c.resilient && !c.silent);
    }

    #[test]
    fn completed_normal_no_diff_no_log_is_resilient() {
        let b = bundle("Announce", ExitRecord::normal(0), false, false, true, true);
        let c = cats(&b, &SteadyStateSpec::cli_task());
        assert_eq!(c.categories(), vec!["resilient"]);
    }

    #[test]
    fn stalled_no_log_no_metric_diff_is_silent() {
        let b = bundle("PeerExchange", ExitRecord::stalled_killed(300.0), false, false, false, false);
        let c = cats(&b, &SteadyStateSpec::cli_task());
        assert_eq!(c.categories(), vec!["silent"]);
    }

    #[test]
    fn stalled_no_log_cpu_plus_is_debuggable_and_silent() {
        let b = bundle("OutgoingThread", ExitRecord::stalled_killed(300.0), false, true, false, false);
        let c = cats(&b, &SteadyStateSpec::cli_task());
        assert!(c.debuggable && c.silent);
        assert!(!c.resilient && !c.observable);
    }

    #[test]
    fn status_change_plus_log_is_observable_and_debuggable_for_http() {
        let mut b = bundle("RightService", ExitRecord::normal(0), true, false, false, false);
        b.digest_diff = vec![InteractionDiff {
            interaction_id: "step-3".into(),
            outcome: InteractionOutcome::Different,
            status_changed: true, // 200 -> 302
            error_indicator: false,
        }];
        let c = cats(&b, &SteadyStateSpec::http(ComparatorId::Verbatim));
        assert!(c.observable && c.debuggable);
        assert!(!c.resilient && !c.silent);
    }

    #[test]
    fn body_only_change_without_log_is_silent_for_http() {
        let mut b = bundle("Pricing", ExitRecord::normal(0), false, false, false, false);
        b.digest_diff = vec![InteractionDiff {
            interaction_id: "step-1".into(),
            outcome: InteractionOutcome::Different,
            status_changed: false,
            error_indicator: false,
        }];
        let c = cats(&b, &SteadyStateSpec::http(ComparatorId::Verbatim));
        assert_eq!(c.categories(), vec!["silent"]);
    }

    #[test]
    fn completed_but_abnormal_metrics_blocks_resilience_without_silence() {
        // a task that completes normally but with heavy thread churn is
        // debuggable only
        let b = bundle("AnnounceLoop", ExitRecord::normal(0), false, true, true, true);
        let c = cats(&b, &SteadyStateSpec::cli_task());
        assert_eq!(c.categories(), vec!["debuggable"]);
    }

    #[test]
    fn zero_injections_is_uncovered() {
        let mut b = bundle("Untouched", ExitRecord::normal(0), false, false, true, true);
        b.counts.injections_fired = 0;
        assert_eq!(
            classify(&b, &SteadyStateSpec::cli_task()),
            Classification::UncoveredUnderPerturbation
        );
    }

    #[test]
    fn classify_is_pure() {
        let b = bundle("Any", ExitRecord::stalled_killed(10.0), true, true, false, false);
        let spec = SteadyStateSpec::cli_task();
        assert_eq!(classify(&b, &spec), classify(&b, &spec));
    }

    // CategorySet mutual-exclusion invariants over the full enumerated
    // evidence space.
    #[test]
    fn exclusion_invariants_hold_over_the_whole_evidence_space() {
        let exits = [
            ExitRecord::normal(0),
            ExitRecord::crashed(Some(1)),
            ExitRecord::stalled_killed(300.0),
        ];
        for spec in [
            SteadyStateSpec::cli_task(),
            SteadyStateSpec::http(ComparatorId::Verbatim),
        ] {
            for exit in exits {
                for logged in [false, true] {
                    for metrics in [false, true] {
                        for equal in [false, true] {
                            for outcome in [false, true] {
                                let b = bundle("X", exit, logged, metrics, equal, outcome);
                                let c = cats(&b, &spec);
                                assert!(!(c.resilient && c.observable), "{c:?}");
                                assert!(!(c.silent && c.resilient), "{c:?}");
                                assert!(!(c.silent && c.observable), "{c:?}");
                                assert!(!(c.silent && c.has("silent") && b.log_evidence.matched));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn corpus_counts_match_individual_sets_and_empty_is_zero() {
        let spec = SteadyStateSpec::cli_task();
        let bundles = vec![
            bundle("A", ExitRecord::normal(0), false, false, true, true),
            bundle("B", ExitRecord::crashed(Some(1)), true, false, false, false),
            bundle("C", ExitRecord::stalled_killed(300.0), false, false, false, false),
        ];
        let summary = classify_corpus(&bundles, &spec);
        assert_eq!(summary.totals.covered, 3);
        assert_eq!(summary.totals.resilient, 1);
        assert_eq!(summary.totals.observable, 1);
        assert_eq!(summary.totals.debuggable, 1);
        assert_eq!(summary.totals.silent, 1);
        let empty = classify_corpus(&[], &spec);
        assert_eq!(empty.totals, CategoryCounts::default());
    }
}
