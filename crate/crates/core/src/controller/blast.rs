//! Blast-radius guard: caps how many injectors may be active at once and,
//! optionally, the total active time an experiment may spend.

use std::collections::HashSet;
use std::time::Duration;

use thiserror::Error;

use crate::injection::PointId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlastDenied {
    #[error("blast-radius limit reached: {max} injector(s) already active")]
    TooManyActive { max: usize },
    #[error("active-time budget exhausted")]
    BudgetExhausted,
}

pub struct BlastGuard {
    max_concurrent: usize,
    active: HashSet<PointId>,
    budget: Option<Duration>,
    spent: Duration,
}

impl BlastGuard {
    pub fn new(max_concurrent: usize, budget: Option<Duration>) -> Self {
        BlastGuard {
            max_concurrent: max_concurrent.max(1),
            active: HashSet::new(),
            budget,
            spent: Duration::ZERO,
        }
    }

    /// Admit an activation that is expected to last `estimated`. Denied
    /// admissions leave the guard unchanged.
    pub fn admit(&mut self, point_id: &PointId, estimated: Duration) -> Result<(), BlastDenied> {
        if self.active.len() >= self.max_concurrent {
            return Err(BlastDenied::TooManyActive {
                max: self.max_concurrent,
            });
        }
        if let Some(budget) = self.budget {
            if self.spent + estimated > budget {
                return Err(BlastDenied::BudgetExhausted);
            }
        }
        self.active.insert(point_id.clone());
        Ok(())
    }

    /// Release an admitted activation, charging the time actually spent.
    pub fn release(&mut self, point_id: &PointId, actual: Duration) {
        if self.active.remove(point_id) {
            self.spent += actual;
        }
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn spent(&self) -> Duration {
        self.spent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(n: u32) -> PointId {
        PointId(format!("p{n}"))
    }

    #[test]
    fn default_limit_allows_exactly_one_active() {
        let mut guard = BlastGuard::new(1, None);
        guard.admit(&pid(0), Duration::from_secs(60)).unwrap();
        assert_eq!(
            guard.admit(&pid(1), Duration::from_secs(60)),
            Err(BlastDenied::TooManyActive { max: 1 })
        );
        guard.release(&pid(0), Duration::from_secs(60));
        guard.admit(&pid(1), Duration::from_secs(60)).unwrap();
    }

    #[test]
    fn higher_limit_admits_up_to_the_limit() {
        let mut guard = BlastGuard::new(3, None);
        for n in 0..3 {
            guard.admit(&pid(n), Duration::from_secs(1)).unwrap();
        }
        assert!(guard.admit(&pid(9), Duration::from_secs(1)).is_err());
    }

    #[test]
    fn zero_budget_never_admits() {
        let mut guard = BlastGuard::new(1, Some(Duration::ZERO));
        assert_eq!(
            guard.admit(&pid(0), Duration::from_secs(1)),
            Err(BlastDenied::BudgetExhausted)
        );
        assert_eq!(guard.active_count(), 0);
    }

    #[test]
    fn budget_is_charged_on_release() {
        let mut guard = BlastGuard::new(1, Some(Duration::from_secs(100)));
        guard.admit(&pid(0), Duration::from_secs(60)).unwrap();
        guard.release(&pid(0), Duration::from_secs(60));
        // 60 spent; a 60-second estimate no longer fits
        assert_eq!(
            guard.admit(&pid(1), Duration::from_secs(60)),
            Err(BlastDenied::BudgetExhausted)
        );
        guard.admit(&pid(1), Duration::from_secs(40)).unwrap();
    }

    #[test]
    fn denied_admission_does_not_leak_slots() {
        let mut guard = BlastGuard::new(1, None);
        guard.admit(&pid(0), Duration::from_secs(1)).unwrap();
        let _ = guard.admit(&pid(1), Duration::from_secs(1));
        guard.release(&pid(0), Duration::from_secs(1));
        assert_eq!(guard.active_count(), 0);
    }
}
