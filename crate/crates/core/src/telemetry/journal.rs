//! Append-only experiment journal: newline-delimited structured records, one
//! object per line, each with fields `{ts, kind, point_id?, payload}`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::injection::PointId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Injection,
    Log,
    Metrics,
    Exit,
    Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub ts: u64,
    pub kind: RecordKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub point_id: Option<PointId>,
    pub payload: Value,
}

/// Single-consumer journal writer. Appends never propagate storage failures
/// to the caller: a failed append is dropped and counted.
pub struct JournalWriter {
    out: Mutex<BufWriter<File>>,
    dropped: AtomicU64,
}

impl JournalWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = File::create(path)?;
        Ok(JournalWriter {
            out: Mutex::new(BufWriter::new(file)),
            dropped: AtomicU64::new(0),
        })
    }

    pub fn open_append(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JournalWriter {
            out: Mutex::new(BufWriter::new(file)),
            dropped: AtomicU64::new(0),
        })
    }

    pub fn append(&self, record: &JournalRecord) {
        let mut out = self.out.lock().unwrap();
        let ok = serde_json::to_string(record)
            .ok()
            .and_then(|line| writeln!(out, "{line}").ok())
            .and_then(|_| out.flush().ok());
        if ok.is_none() {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

/// Read every well-formed record of a journal file, in file order.
pub fn read_journal(path: &Path) -> std::io::Result<Vec<JournalRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalRecord>(&line) {
            Ok(r) => records.push(r),
            // a record torn by a kill is dropped, not fatal
            Err(_) => continue,
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn append_and_read_back_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let writer = JournalWriter::create(&path).unwrap();
        for i in 0..5u64 {
            writer.append(&JournalRecord {
                ts: 1000 + i,
                kind: RecordKind::Injection,
                point_id: Some(PointId(format!("p{i}"))),
                payload: json!({"n": i}),
            });
        }
        let records = read_journal(&path).unwrap();
        assert_eq!(records.len(), 5);
        assert!(records.windows(2).all(|w| w[0].ts <= w[1].ts));
        assert_eq!(records[3].point_id, Some(PointId("p3".into())));
    }

    #[test]
    fn torn_last_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        std::fs::write(
            &path,
            "{\"ts\":1,\"kind\":\"exit\",\"payload\":{}}\n{\"ts\":2,\"kind\":\"metr",
        )
        .unwrap();
        let records = read_journal(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].kind, RecordKind::Exit);
    }
}
