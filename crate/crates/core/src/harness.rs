//! Workload harness: records a canonical interaction trace against a healthy
//! service and replays it inside experiment windows, capturing a transcript
//! per step for behavior comparison.
//!
//! The service wire format is deliberately minimal: one JSON request line,
//! one JSON response line, one TCP connection per step. A trace file is a
//! header line followed by one JSON step per line.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::classifier::{InteractionDiff, InteractionOutcome};
use crate::telemetry::{digest_behavior, ComparatorId, Transcript};

pub const TRACE_HEADER: &str = "chaos-trace v1";

/// Pause between replayed steps, letting the target settle between requests.
pub const REPLAY_STEP_GAP: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a trace file (bad header): {0}")]
    BadHeader(String),
    #[error("malformed trace step at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("service unreachable at {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRequest {
    pub verb: String,
    pub path: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceExpectation {
    pub status: String,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub ordinal: u32,
    pub request: TraceRequest,
    pub expected: TraceExpectation,
}

impl TraceStep {
    pub fn interaction_id(&self) -> String {
        format!("step-{}", self.ordinal)
    }

    pub fn expected_transcript(&self) -> Transcript {
        Transcript::new(
            &self.interaction_id(),
            &self.expected.status,
            self.expected.body.to_string().as_bytes(),
        )
    }
}

pub fn write_trace(path: &Path, steps: &[TraceStep]) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for step in steps {
        out.push_str(&serde_json::to_string(step).expect("trace step serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceStep>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == TRACE_HEADER => {}
        Some((_, header)) => return Err(HarnessError::BadHeader(header.to_string())),
        None => return Err(HarnessError::BadHeader("<empty file>".to_string())),
    }
    let mut steps = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let step: TraceStep = serde_json::from_str(line).map_err(|e| HarnessError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        steps.push(step);
    }
    Ok(steps)
}

/// One round trip: connect, send the request line, read one response line.
/// `None` means the step got no well-formed answer within the timeout.
fn round_trip(addr: &str, request: &TraceRequest, timeout: Duration) -> Option<(String, Value)> {
    let stream = TcpStream::connect(addr).ok()?;
    stream.set_read_timeout(Some(timeout)).ok()?;
    stream.set_write_timeout(Some(timeout)).ok()?;
    let mut writer = stream.try_clone().ok()?;
    let line = serde_json::to_string(request).ok()?;
    writer.write_all(line.as_bytes()).ok()?;
    writer.write_all(b"\n").ok()?;
    writer.flush().ok()?;
    let mut response = String::new();
    BufReader::new(stream).read_line(&mut response).ok()?;
    let parsed: Value = serde_json::from_str(response.trim()).ok()?;
    let status = parsed.get("status")?.as_str()?.to_string();
    let body = parsed.get("body")?.clone();
    Some((status, body))
}

/// Record a trace against a healthy service: every request must answer.
pub fn record_trace(
    addr: &str,
    requests: &[TraceRequest],
    timeout: Duration,
) -> Result<Vec<TraceStep>, HarnessError> {
    let mut steps = Vec::new();
    for (i, request) in requests.iter().enumerate() {
        let (status, body) = round_trip(addr, request, timeout)
            .ok_or_else(|| HarnessError::Unreachable(addr.to_string()))?;
        steps.push(TraceStep {
            ordinal: i as u32,
            request: request.clone(),
            expected: TraceExpectation { status, body },
        });
        std::thread::sleep(REPLAY_STEP_GAP);
    }
    Ok(steps)
}

/// Replay one pass of the trace. A step that times out or gets a malformed
/// answer yields no transcript (a missing interaction, not an error).
pub fn replay_trace(
    addr: &str,
    steps: &[TraceStep],
    step_timeout: Duration,
) -> Vec<(String, Option<Transcript>)> {
    let mut transcripts = Vec::with_capacity(steps.len());
    for step in steps {
        let id = step.interaction_id();
        let transcript = round_trip(addr, &step.request, step_timeout).map(|(status, body)| {
            Transcript::new(&id, &status, body.to_string().as_bytes())
        });
        transcripts.push((id, transcript));
        std::thread::sleep(REPLAY_STEP_GAP);
    }
    transcripts
}

/// Does this answer surface an error to the user? True for a 5xx-style
/// status, an object body carrying an "error" member, or console output
/// starting with "error:".
pub fn error_indicator(status_token: &str, body: &[u8]) -> bool {
    if status_token.starts_with('5') {
        return true;
    }
    if let Ok(value) = serde_json::from_slice::<Value>(body) {
        if value.get("error").is_some() {
            return true;
        }
    }
    body.starts_with(b"error:") || body.windows(7).any(|w| w == b"\nerror:")
}

/// Compare one replayed window against the recorded expectations.
pub fn diff_replay(
    steps: &[TraceStep],
    replayed: &[(String, Option<Transcript>)],
    comparator: ComparatorId,
) -> Vec<InteractionDiff> {
    steps
        .iter()
        .map(|step| {
            let id = step.interaction_id();
            let got = replayed
                .iter()
                .find(|(rid, _)| *rid == id)
                .and_then(|(_, t)| t.as_ref());
            match got {
                None => InteractionDiff {
                    interaction_id: id,
                    outcome: InteractionOutcome::Missing,
                    status_changed: false,
                    error_indicator: false,
                },
                Some(transcript) => {
                    let expected = digest_behavior(&step.expected_transcript(), comparator);
                    let actual = digest_behavior(transcript, comparator);
                    InteractionDiff {
                        interaction_id: id,
                        outcome: if expected.equivalent(&actual) {
                            InteractionOutcome::Equal
                        } else {
                            InteractionOutcome::Different
                        },
                        status_changed: expected.status_token != actual.status_token,
                        error_indicator: error_indicator(
                            &transcript.status_token,
                            &transcript.body,
                        ),
                    }
                }
            }
        })
        .collect()
}

/// Transcript of a bounded task's console output, treated as one interaction
/// with the exit code as status token.
pub fn console_transcript(exit_code_token: &str, stdout: &[u8]) -> Transcript {
    Transcript::new("console", exit_code_token, stdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    /// Minimal line-JSON service: GET /ok answers 200 {"n":1}; GET /perm
    /// answers with a permuted array; GET /err answers 200 {"error":"x"};
    /// /slow never answers.
    fn spawn_service() -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() {
                        return;
                    }
                    let req: TraceRequest = match serde_json::from_str(line.trim()) {
                        Ok(r) => r,
                        Err(_) => return,
                    };
                    let reply = match req.path.as_str() {
                        "/ok" => Some(r#"{"status":"200","body":{"n":1}}"#),
                        "/perm" => Some(r#"{"status":"200","body":{"options":[14,1],"price":17}}"#),
                        "/err" => Some(r#"{"status":"200","body":{"error":"boom"}}"#),
                        _ => None,
                    };
                    if let Some(reply) = reply {
                        let mut w = stream;
                        let _ = w.write_all(reply.as_bytes());
                        let _ = w.write_all(b"\n");
                    }
                    // /slow: hold the connection open without answering
                    if req.path == "/slow" {
                        std::thread::sleep(Duration::from_secs(5));
                    }
                });
            }
        });
        addr
    }

    fn get(path: &str) -> TraceRequest {
        TraceRequest {
            verb: "GET".into(),
            path: path.into(),
            payload: Value::Null,
        }
    }

    #[test]
    fn record_then_replay_round_trips_equal() {
        let addr = spawn_service();
        let steps =
            record_trace(&addr, &[get("/ok"), get("/perm")], Duration::from_secs(2)).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].expected.status, "200");
        let replayed = replay_trace(&addr, &steps, Duration::from_secs(2));
        let diffs = diff_replay(&steps, &replayed, ComparatorId::Verbatim);
        assert!(diffs.iter().all(|d| d.outcome == InteractionOutcome::Equal));
    }

    #[test]
    fn trace_file_round_trips() {
        let addr = spawn_service();
        let steps = record_trace(&addr, &[get("/ok")], Duration::from_secs(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        write_trace(&path, &steps).unwrap();
        assert_eq!(read_trace(&path).unwrap(), steps);
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        std::fs::write(&path, "not a trace\n").unwrap();
        assert!(matches!(read_trace(&path), Err(HarnessError::BadHeader(_))));
    }

    #[test]
    fn unanswered_step_is_missing_not_an_error() {
        let addr = spawn_service();
        let mut steps = record_trace(&addr, &[get("/ok")], Duration::from_secs(2)).unwrap();
        steps.push(TraceStep {
            ordinal: 1,
            request: get("/slow"),
            expected: TraceExpectation {
                status: "200".into(),
                body: serde_json::json!({}),
            },
        });
        let replayed = replay_trace(&addr, &steps, Duration::from_millis(300));
        let diffs = diff_replay(&steps, &replayed, ComparatorId::Verbatim);
        assert_eq!(diffs[0].outcome, InteractionOutcome::Equal);
        assert_eq!(diffs[1].outcome, InteractionOutcome::Missing);
    }

    #[test]
    fn error_body_sets_the_indicator() {
        let addr = spawn_service();
        let steps = record_trace(&addr, &[get("/ok")], Duration::from_secs(2)).unwrap();
        // replay /err under the /ok expectation: different, with error flag
        let mut err_steps = steps.clone();
        err_steps[0].request = get("/err");
        let replayed = replay_trace(&addr, &err_steps, Duration::from_secs(2));
        let diffs = diff_replay(&steps, &replayed, ComparatorId::Verbatim);
        assert_eq!(diffs[0].outcome, InteractionOutcome::Different);
        assert!(diffs[0].error_indicator);
        assert!(!diffs[0].status_changed);
    }

    #[test]
    fn structured_comparator_tolerates_permuted_arrays_in_replay() {
        let addr = spawn_service();
        let mut steps = record_trace(&addr, &[get("/perm")], Duration::from_secs(2)).unwrap();
        // pretend the recording saw the other ordering
        steps[0].expected.body = serde_json::json!({"options":[1,14],"price":17});
        let replayed = replay_trace(&addr, &steps, Duration::from_secs(2));
        let verbatim = diff_replay(&steps, &replayed, ComparatorId::Verbatim);
        assert_eq!(verbatim[0].outcome, InteractionOutcome::Different);
        let structured = diff_replay(&steps, &replayed, ComparatorId::Structured);
        assert_eq!(structured[0].outcome, InteractionOutcome::Equal);
    }

    #[test]
    fn console_error_line_sets_indicator() {
        assert!(error_indicator("13", b"error: meta corrupt\n"));
        assert!(error_indicator("0", b"progress 10%\nerror: late failure\n"));
        assert!(!error_indicator("0", b"all chunks fetched\n"));
        assert!(error_indicator("500", b"{}"));
    }
}
