//! Hypothesis store: an append-only record of proposed, accepted, validated
//! and falsified hypotheses, keyed by the version-stable point key so entries
//! survive target restarts and rebuilds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::CategorySet;
use crate::injection::PointKey;
use crate::unix_millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisStatus {
    Proposed,
    Accepted,
    Validated,
    Falsified,
    /// The point no longer exists in the current application version.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub id: String,
    pub point: PointKey,
    pub category: String,
    pub status: HypothesisStatus,
    /// Window that produced this state transition.
    pub window_id: String,
    pub app_version: String,
    pub ts: u64,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o on hypothesis store: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown hypothesis: {0}")]
    Unknown(String),
    #[error("hypothesis {id} is {status:?}, not proposed")]
    NotProposed { id: String, status: HypothesisStatus },
}

/// Append-only JSONL store. The current state of a hypothesis is its last
/// record; earlier records are its history.
pub struct HypothesisStore {
    path: PathBuf,
    records: Vec<HypothesisRecord>,
}

pub fn hypothesis_id(point: &PointKey, category: &str) -> String {
    format!("{point}#{category}")
}

impl HypothesisStore {
    /// Load the store; a missing file is an empty store.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let records = match std::fs::read_to_string(path) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .filter_map(|l| serde_json::from_str(l).ok())
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(HypothesisStore {
            path: path.to_path_buf(),
            records,
        })
    }

    fn append(&mut self, record: HypothesisRecord) -> Result<(), StoreError> {
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        self.records.push(record);
        Ok(())
    }

    /// Current state per hypothesis id (last record wins).
    pub fn current(&self) -> BTreeMap<String, HypothesisRecord> {
        let mut map = BTreeMap::new();
        for r in &self.records {
            map.insert(r.id.clone(), r.clone());
        }
        map
    }

    pub fn get(&self, id: &str) -> Option<HypothesisRecord> {
        self.records.iter().rev().find(|r| r.id == id).cloned()
    }

    /// Propose one hypothesis per satisfied category of a classified bundle.
    /// Already-known hypotheses are not re-proposed. Returns new ids.
    pub fn propose(
        &mut self,
        point: &PointKey,
        categories: &CategorySet,
        window_id: &str,
        app_version: &str,
    ) -> Result<Vec<String>, StoreError> {
        let current = self.current();
        let mut new_ids = Vec::new();
        for category in categories.categories() {
            let id = hypothesis_id(point, category);
            if current.contains_key(&id) {
                continue;
            }
            self.append(HypothesisRecord {
                id: id.clone(),
                point: point.clone(),
                category: category.to_string(),
                status: HypothesisStatus::Proposed,
                window_id: window_id.to_string(),
                app_version: app_version.to_string(),
                ts: unix_millis(),
            })?;
            new_ids.push(id);
        }
        Ok(new_ids)
    }

    /// Accept a proposed hypothesis, making it eligible for falsification.
    pub fn accept(&mut self, id: &str, app_version: &str) -> Result<(), StoreError> {
        let last = self.get(id).ok_or_else(|| StoreError::Unknown(id.to_string()))?;
        if last.status != HypothesisStatus::Proposed {
            return Err(StoreError::NotProposed {
                id: id.to_string(),
                status: last.status,
            });
        }
        self.append(HypothesisRecord {
            status: HypothesisStatus::Accepted,
            app_version: app_version.to_string(),
            ts: unix_millis(),
            ..last
        })
    }

    /// Record a falsification-mode outcome for an accepted hypothesis.
    pub fn record_outcome(
        &mut self,
        id: &str,
        status: HypothesisStatus,
        window_id: &str,
        app_version: &str,
    ) -> Result<(), StoreError> {
        let last = self.get(id).ok_or_else(|| StoreError::Unknown(id.to_string()))?;
        self.append(HypothesisRecord {
            status,
            window_id: window_id.to_string(),
            app_version: app_version.to_string(),
            ts: unix_millis(),
            ..last
        })
    }

    /// Hypotheses that are standing claims: accepted, or validated earlier
    /// (a validated hypothesis stays falsifiable on later app versions).
    pub fn accepted(&self) -> Vec<HypothesisRecord> {
        self.current()
            .into_values()
            .filter(|r| {
                matches!(
                    r.status,
                    HypothesisStatus::Accepted | HypothesisStatus::Validated
                )
            })
            .collect()
    }

    pub fn all_current(&self) -> Vec<HypothesisRecord> {
        self.current().into_values().collect()
    }

    pub fn history_len(&self) -> usize {
        self.records.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injection::Location;

    fn key(unit: &str) -> PointKey {
        PointKey {
            location: Location::new(unit, "run", 0),
            error_kind: "IOException".into(),
            arm_ordinal: 0,
        }
    }

    fn resilient_set() -> CategorySet {
        CategorySet {
            resilient: true,
            ..Default::default()
        }
    }

    fn store(dir: &tempfile::TempDir) -> HypothesisStore {
        HypothesisStore::load(&dir.path().join("hypotheses.db")).unwrap()
    }

    #[test]
    fn propose_accept_validate_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(&dir);
        let ids = s.propose(&key("Announce"), &resilient_set(), "w1", "v1").unwrap();
        assert_eq!(ids.len(), 1);
        s.accept(&ids[0], "v1").unwrap();
        s.record_outcome(&ids[0], HypothesisStatus::Validated, "w2", "v2").unwrap();

        let reloaded = store(&dir);
        let current = reloaded.current();
        assert_eq!(current[&ids[0]].status, HypothesisStatus::Validated);
        // full history retained
        assert_eq!(reloaded.history_len(), 3);
    }

    #[test]
    fn proposing_twice_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(&dir);
        let first = s.propose(&key("Announce"), &resilient_set(), "w1", "v1").unwrap();
        let second = s.propose(&key("Announce"), &resilient_set(), "w2", "v1").unwrap();
        assert_eq!(first.len(), 1);
        assert!(second.is_empty());
    }

    #[test]
    fn dual_category_bundle_proposes_two_hypotheses() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(&dir);
        let set = CategorySet {
            debuggable: true,
            silent: true,
            ..Default::default()
        };
        let ids = s.propose(&key("OutgoingThread"), &set, "w1", "v1").unwrap();
        assert_eq!(ids.len(), 2);
        assert!(ids.iter().any(|i| i.ends_with("#debuggable")));
        assert!(ids.iter().any(|i| i.ends_with("#silent")));
    }

    #[test]
    fn accepting_unknown_or_non_proposed_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(&dir);
        assert!(matches!(s.accept("ghost", "v1"), Err(StoreError::Unknown(_))));
        let ids = s.propose(&key("A"), &resilient_set(), "w1", "v1").unwrap();
        s.accept(&ids[0], "v1").unwrap();
        assert!(matches!(
            s.accept(&ids[0], "v1"),
            Err(StoreError::NotProposed { .. })
        ));
    }

    #[test]
    fn accepted_filter_returns_standing_claims_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(&dir);
        let a = s.propose(&key("A"), &resilient_set(), "w1", "v1").unwrap();
        let _b = s.propose(&key("B"), &resilient_set(), "w1", "v1").unwrap();
        s.accept(&a[0], "v1").unwrap();
        let accepted = s.accepted();
        assert_eq!(accepted.len(), 1);
        assert_eq!(accepted[0].id, a[0]);

        // validated hypotheses remain standing claims for later versions...
        s.record_outcome(&a[0], HypothesisStatus::Validated, "w2", "v2").unwrap();
        assert_eq!(s.accepted().len(), 1);
        // ...but falsified ones drop out
        s.record_outcome(&a[0], HypothesisStatus::Falsified, "w3", "v3").unwrap();
        assert!(s.accepted().is_empty());
    }

    #[test]
    fn missing_file_is_an_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(&dir);
        assert!(s.all_current().is_empty());
        assert!(s.accepted().is_empty());
    }
}
