use serde::{Deserialize, Serialize};

use crate::lockmodel::{classify, LockModelError, Passage, SuperPassage};
use crate::simkernel::{EventKind, History, LockId, Pid};

/// From a failure until every super-passage that started before it has
/// completed, or until the end of the history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsequenceInterval {
    pub failure_seq: u64,
    pub pid: Pid,
    /// Whether the failure was unsafe for the analysed lock.
    pub unsafe_failure: bool,
    pub start: u64,
    pub end: u64,
}

impl ConsequenceInterval {
    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t <= self.end
    }

    /// Closed-interval overlap with `[a, b]`.
    pub fn overlaps(&self, a: u64, b: u64) -> bool {
        self.start <= b && a <= self.end
    }
}

/// Passage structure of one lock plus everything derived from crash times.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analysis {
    pub lock: LockId,
    pub horizon: u64,
    pub passages: Vec<Passage>,
    pub superpassages: Vec<SuperPassage>,
    pub intervals: Vec<ConsequenceInterval>,
}

impl Analysis {
    pub fn new(h: &History, lock: LockId) -> Result<Self, LockModelError> {
        let (passages, superpassages) = classify(h, lock)?;
        let horizon = h.events.last().map_or(0, |e| e.seq);
        let intervals = consequence_intervals(h, lock, &superpassages, horizon);
        Ok(Analysis { lock, horizon, passages, superpassages, intervals })
    }

    pub fn sp_window(&self, sp: &SuperPassage) -> (u64, u64) {
        (sp.start, sp.end_or(self.horizon))
    }

    /// Number of failures whose consequence interval overlaps the super-passage.
    pub fn failure_density(&self, sp: usize) -> usize {
        let (a, b) = self.sp_window(&self.superpassages[sp]);
        self.intervals.iter().filter(|ci| ci.overlaps(a, b)).count()
    }

    /// Maximum number of super-passages simultaneously in progress at any
    /// point of this one (closed intervals, so touching windows overlap).
    pub fn point_contention(&self, sp: usize) -> usize {
        let (a, b) = self.sp_window(&self.superpassages[sp]);
        let others: Vec<(u64, u64)> = self
            .superpassages
            .iter()
            .map(|s| self.sp_window(s))
            .filter(|&(s, e)| s <= b && a <= e)
            .collect();
        // The maximum is attained at the start of some overlapping window (or at `a`).
        std::iter::once(a)
            .chain(others.iter().map(|&(s, _)| s).filter(|&s| s >= a))
            .map(|t| others.iter().filter(|&&(s, e)| s <= t && t <= e).count())
            .max()
            .unwrap_or(1)
    }

    /// Whether the super-passage overlaps any consequence interval.
    pub fn ci_concurrent(&self, sp: usize) -> bool {
        self.failure_density(sp) > 0
    }

    /// Active unsafe consequence intervals at `t`.
    pub fn active_unsafe(&self, t: u64) -> usize {
        self.intervals.iter().filter(|ci| ci.unsafe_failure && ci.contains(t)).count()
    }
}

/// One interval per crash in the history. Super-passages are those of `lock`.
pub fn consequence_intervals(
    h: &History,
    lock: LockId,
    sps: &[SuperPassage],
    horizon: u64,
) -> Vec<ConsequenceInterval> {
    h.events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Crash { unsafe_for } => {
                let t = e.seq;
                let end = sps
                    .iter()
                    .filter(|sp| sp.start < t)
                    .map(|sp| sp.end_or(horizon))
                    .fold(t, u64::max)
                    .min(horizon);
                Some(ConsequenceInterval {
                    failure_seq: t,
                    pid: e.pid,
                    unsafe_failure: unsafe_for.contains(&lock),
                    start: t,
                    end: end.max(t),
                })
            }
            _ => None,
        })
        .collect()
}
