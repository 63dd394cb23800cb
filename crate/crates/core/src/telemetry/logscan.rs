//! Application-log scanning: decides whether a window's log output carries
//! evidence of the injected error.
//!
//! Three match rules, tried in order: the injection marker, the error-kind
//! name, and a stack frame naming the point's routine. Real applications log
//! caught errors without any marker, hence the fallbacks.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::injection::{InjectionPoint, PointId};

const MAX_SAMPLE_LINES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchRule {
    Marker,
    ExceptionName,
    StackFrame,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvidence {
    pub point_id: PointId,
    pub matched: bool,
    pub sample_lines: Vec<String>,
    pub match_rule: Option<MatchRule>,
    /// Set to "log-unavailable" when the sink could not be read; a distinct
    /// state from a true negative.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
}

impl LogEvidence {
    fn negative(point_id: PointId, diagnostic: Option<String>) -> Self {
        LogEvidence {
            point_id,
            matched: false,
            sample_lines: Vec::new(),
            match_rule: None,
            diagnostic,
        }
    }
}

/// Where the application's log output lands. A window gets its own log file,
/// so the file is the window.
#[derive(Debug, Clone)]
pub enum LogSink {
    File(PathBuf),
    Unavailable,
}

/// Scan the sink for evidence of `point`'s injected error. `marker` is the
/// synthesized error's marker message for the current window.
pub fn scan_logs(sink: &LogSink, point: &InjectionPoint, marker: &str) -> LogEvidence {
    let path = match sink {
        LogSink::File(p) => p,
        LogSink::Unavailable => {
            return LogEvidence::negative(point.point_id.clone(), Some("log-unavailable".into()))
        }
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(_) => {
            return LogEvidence::negative(point.point_id.clone(), Some("log-unavailable".into()))
        }
    };

    let frame_dotted = format!("{}.{}", point.location.unit, point.location.routine);
    let frame_pathed = format!("{}::{}", point.location.unit, point.location.routine);

    let mut best_rule: Option<MatchRule> = None;
    let mut sample_lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let Ok(line) = line else { break };
        let rule = if line.contains(marker) {
            Some(MatchRule::Marker)
        } else if line.contains(&point.error_kind) {
            Some(MatchRule::ExceptionName)
        } else if line.contains(&frame_dotted) || line.contains(&frame_pathed) {
            Some(MatchRule::StackFrame)
        } else {
            None
        };
        if let Some(rule) = rule {
            if best_rule.map_or(true, |b| rank(rule) < rank(b)) {
                best_rule = Some(rule);
            }
            if sample_lines.len() < MAX_SAMPLE_LINES {
                sample_lines.push(line);
            }
        }
    }

    LogEvidence {
        point_id: point.point_id.clone(),
        matched: best_rule.is_some(),
        sample_lines,
        match_rule: best_rule,
        diagnostic: None,
    }
}

fn rank(rule: MatchRule) -> u8 {
    match rule {
        MatchRule::Marker => 0,
        MatchRule::ExceptionName => 1,
        MatchRule::StackFrame => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injection::Location;
    use std::io::Write;

    fn point() -> InjectionPoint {
        InjectionPoint {
            point_id: PointId("p0".into()),
            location: Location::new("Announce", "run", 0),
            error_kind: "AnnounceException".into(),
            arm_ordinal: 0,
        }
    }

    fn sink_with(lines: &[&str]) -> (tempfile::TempDir, LogSink) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.log");
        let mut f = File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        (dir, LogSink::File(path))
    }

    #[test]
    fn marker_line_matches_with_marker_rule() {
        let (_d, sink) = sink_with(&["warn: AnnounceException: CHAOS_INJECTED:p0"]);
        let ev = scan_logs(&sink, &point(), "CHAOS_INJECTED:p0");
        assert!(ev.matched);
        assert_eq!(ev.match_rule, Some(MatchRule::Marker));
        assert_eq!(ev.sample_lines.len(), 1);
    }

    #[test]
    fn exception_name_without_marker_matches() {
        let (_d, sink) = sink_with(&["caught AnnounceException while announcing"]);
        let ev = scan_logs(&sink, &point(), "CHAOS_INJECTED:p0");
        assert_eq!(ev.match_rule, Some(MatchRule::ExceptionName));
    }

    #[test]
    fn stack_frame_naming_the_routine_matches() {
        let (_d, sink) = sink_with(&["  at Announce.run(Announce.java:120)"]);
        let ev = scan_logs(&sink, &point(), "CHAOS_INJECTED:p0");
        assert_eq!(ev.match_rule, Some(MatchRule::StackFrame));
    }

    #[test]
    fn swallow_with_no_log_call_does_not_match() {
        let (_d, sink) = sink_with(&["download progress 42%"]);
        let ev = scan_logs(&sink, &point(), "CHAOS_INJECTED:p0");
        assert!(!ev.matched);
        assert!(ev.sample_lines.is_empty());
        assert!(ev.diagnostic.is_none());
    }

    #[test]
    fn empty_window_does_not_match() {
        let (_d, sink) = sink_with(&[]);
        let ev = scan_logs(&sink, &point(), "CHAOS_INJECTED:p0");
        assert!(!ev.matched);
    }

    #[test]
    fn unreadable_sink_is_flagged_not_a_true_negative() {
        let ev = scan_logs(&LogSink::Unavailable, &point(), "CHAOS_INJECTED:p0");
        assert!(!ev.matched);
        assert_eq!(ev.diagnostic.as_deref(), Some("log-unavailable"));
    }

    #[test]
    fn matched_iff_sample_lines_exist() {
        let (_d, sink) = sink_with(&["AnnounceException a", "AnnounceException b"]);
        let ev = scan_logs(&sink, &point(), "CHAOS_INJECTED:p0");
        assert_eq!(ev.matched, !ev.sample_lines.is_empty());
    }
}
