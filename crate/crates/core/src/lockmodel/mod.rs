//! The execution loop, lock metadata and passage bookkeeping.

mod passages;
mod program;

use serde::{Deserialize, Serialize};

use crate::simkernel::{LockId, Pid, StepBounds};

pub use passages::{
    check_marker_grammar, classify, classify_passages, classify_superpassages, locality_violations,
    unsafe_failures, FailureRecord, Passage, Safety, SuperPassage,
};
pub use program::ExecLoop;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LockModelError {
    #[error("malformed history at seq {seq} (pid {pid}): {reason}")]
    MalformedHistory { seq: u64, pid: Pid, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LockKind {
    Wr,
    Arbitrator,
    Tournament,
    Semi,
    Super,
}

/// Static description of one lock instance inside a built system.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockInfo {
    pub id: LockId,
    pub name: String,
    pub kind: LockKind,
    /// Level in a recursive lock (1-based); 0 outside one.
    pub level: u32,
    /// Strongly recoverable locks declare an empty sensitive window.
    pub strong: bool,
    pub bounds: StepBounds,
}

/// All lock instances of a system; `target` is the lock the application calls.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub n: usize,
    pub target: Option<LockId>,
    pub locks: Vec<LockInfo>,
}

impl Topology {
    pub fn lock(&self, id: LockId) -> Option<&LockInfo> {
        self.locks.iter().find(|l| l.id == id)
    }

    pub fn target_info(&self) -> Option<&LockInfo> {
        self.target.and_then(|t| self.lock(t))
    }

    /// Filter (weakly recoverable) locks, ordered by level.
    pub fn filters(&self) -> Vec<&LockInfo> {
        let mut v: Vec<_> = self.locks.iter().filter(|l| l.kind == LockKind::Wr && l.level > 0).collect();
        v.sort_by_key(|l| l.level);
        v
    }

    pub fn push(&mut self, info: LockInfo) {
        self.locks.push(info);
    }
}
