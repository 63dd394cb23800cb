//! Resilience report: one row per covered injection point, sorted by
//! criticality so the most dangerous recovery blocks surface first.
//!
//! Report generation is a pure function of the classified evidence; rendering
//! the same corpus twice yields byte-identical output, so reports can be
//! regenerated and diffed.

use serde::{Deserialize, Serialize};

use crate::classifier::{
    classify, classify_corpus, Classification, CorpusSummary, EvidenceBundle, SteadyStateSpec,
};
use crate::injection::{PointId, PointKey};
use crate::telemetry::{ExitStatus, MetricsDelta};

pub const REPORT_VERSION: u32 = 1;

/// Criticality tiers, most critical first. Silent failures are the worst
/// outcome; a resilient block needs no attention; an uncovered point tells
/// the operator to extend the workload, not to fix the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalityTier {
    Silent,
    Observable,
    DebuggableOnly,
    Resilient,
    Uncovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub point: PointKey,
    pub point_id: PointId,
    pub tier: CriticalityTier,
    pub categories: Vec<String>,
    pub executions_observation: u64,
    pub executions_perturbed: u64,
    pub injections_fired: u64,
    pub logged: bool,
    /// Domain outcome flag when the workload has one (task completed).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub outcome_ok: Option<bool>,
    pub exit: String,
    /// "no diff", "-" (not comparable), or the abnormal flags joined with
    /// spaces, e.g. "cpu+ threads+".
    pub metrics: String,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceReport {
    pub report_version: u32,
    pub app_version: String,
    pub summary: CorpusSummary,
    pub entries: Vec<ReportEntry>,
}

fn tier_of(bundle: &EvidenceBundle, spec: &SteadyStateSpec) -> (CriticalityTier, Vec<String>, Vec<String>) {
    match classify(bundle, spec) {
        Classification::UncoveredUnderPerturbation => {
            (CriticalityTier::Uncovered, Vec::new(), Vec::new())
        }
        Classification::Classified { categories } => {
            let tier = if categories.silent {
                CriticalityTier::Silent
            } else if categories.observable {
                CriticalityTier::Observable
            } else if categories.resilient {
                CriticalityTier::Resilient
            } else {
                CriticalityTier::DebuggableOnly
            };
            let cats = categories.categories().iter().map(|c| c.to_string()).collect();
            (tier, cats, categories.notes)
        }
    }
}

fn exit_word(bundle: &EvidenceBundle) -> String {
    match bundle.exit.status {
        ExitStatus::Normal => "normally".to_string(),
        ExitStatus::Crashed => "crashed".to_string(),
        ExitStatus::StalledKilled => "stalled".to_string(),
    }
}

fn metrics_word(delta: &MetricsDelta) -> String {
    match delta {
        MetricsDelta::Unavailable => "-".to_string(),
        compared => {
            let flags = compared.flags();
            if flags.is_empty() {
                "no diff".to_string()
            } else {
                flags.join(" ")
            }
        }
    }
}

/// Build the report for one classified corpus. Entry order is the report's
/// contract: ascending tier, then descending perturbed-execution count, then
/// the point key for a stable total order.
pub fn build_report(
    bundles: &[EvidenceBundle],
    spec: &SteadyStateSpec,
    app_version: &str,
) -> ResilienceReport {
    let mut entries: Vec<ReportEntry> = bundles
        .iter()
        .map(|b| {
            let (tier, categories, notes) = tier_of(b, spec);
            ReportEntry {
                point: b.point.clone(),
                point_id: b.point_id.clone(),
                tier,
                categories,
                executions_observation: b.counts.observation,
                executions_perturbed: b.counts.perturbed,
                injections_fired: b.counts.injections_fired,
                logged: b.log_evidence.matched,
                outcome_ok: b.task_completed,
                exit: exit_word(b),
                metrics: metrics_word(&b.metrics_delta),
                notes,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        a.tier
            .cmp(&b.tier)
            .then(b.executions_perturbed.cmp(&a.executions_perturbed))
            .then_with(|| point_key_ord(&a.point).cmp(&point_key_ord(&b.point)))
    });
    ResilienceReport {
        report_version: REPORT_VERSION,
        app_version: app_version.to_string(),
        summary: classify_corpus(bundles, spec),
        entries,
    }
}

fn point_key_ord(key: &PointKey) -> (String, String, u32, String, u32) {
    (
        key.location.unit.clone(),
        key.location.routine.clone(),
        key.location.block_ordinal,
        key.error_kind.clone(),
        key.arm_ordinal,
    )
}

/// Stable JSON rendering; byte-identical for equal reports.
pub fn render_json(report: &ResilienceReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

/// Human-oriented table, one row per point, most critical first.
pub fn render_text(report: &ResilienceReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "resilience report v{} for {}\n",
        report.report_version, report.app_version
    ));
    let t = &report.summary.totals;
    out.push_str(&format!(
        "covered {} | resilient {} | observable {} | debuggable {} | silent {} | uncovered {}\n\n",
        t.covered, t.resilient, t.observable, t.debuggable, t.silent, report.summary.uncovered
    ));
    out.push_str(&format!(
        "{:<44} {:>11} {:>5} {:<8} {:<14} {}\n",
        "point", "obs/pert", "log", "exit", "metrics", "categories"
    ));
    for e in &report.entries {
        let point = format!(
            "{}/{},{},{}",
            e.point.location.unit, e.point.location.routine, e.point.error_kind, e.point.arm_ordinal
        );
        let cats = if e.categories.is_empty() {
            "uncovered".to_string()
        } else {
            e.categories.join(",")
        };
        out.push_str(&format!(
            "{:<44} {:>11} {:>5} {:<8} {:<14} {}\n",
            point,
            format!("{}/{}", e.executions_observation, e.executions_perturbed),
            if e.logged { "yes" } else { "no" },
            e.exit,
            e.metrics,
            cats
        ));
    }
    out
}
