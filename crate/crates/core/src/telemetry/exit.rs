//! Exit status of a target process for one experiment window.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitStatus {
    Normal,
    Crashed,
    StalledKilled,
}

/// Exactly one per (point, window). `killed_after_s` is present iff the
/// process was stalled and killed at the timeout; constructors enforce it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub status: ExitStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exit_code: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub killed_after_s: Option<f64>,
}

impl ExitRecord {
    pub fn normal(exit_code: i32) -> Self {
        ExitRecord {
            status: ExitStatus::Normal,
            exit_code: Some(exit_code),
            killed_after_s: None,
        }
    }

    pub fn crashed(exit_code: Option<i32>) -> Self {
        ExitRecord {
            status: ExitStatus::Crashed,
            exit_code,
            killed_after_s: None,
        }
    }

    pub fn stalled_killed(killed_after_s: f64) -> Self {
        ExitRecord {
            status: ExitStatus::StalledKilled,
            exit_code: None,
            killed_after_s: Some(killed_after_s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses_are_mutually_exclusive_and_well_formed() {
        let n = ExitRecord::normal(0);
        let c = ExitRecord::crashed(Some(13));
        let s = ExitRecord::stalled_killed(300.0);
        assert_eq!(n.status, ExitStatus::Normal);
        assert!(n.killed_after_s.is_none());
        assert_eq!(c.status, ExitStatus::Crashed);
        assert!(c.killed_after_s.is_none());
        assert_eq!(s.status, ExitStatus::StalledKilled);
        assert_eq!(s.killed_after_s, Some(300.0));
        assert!(s.exit_code.is_none());
    }
}
