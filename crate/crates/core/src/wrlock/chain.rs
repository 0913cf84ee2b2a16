use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::simkernel::{Addr, Event, EventKind, LockId, MarkerKind, Memory, Pid, Word, LOCKED, NIL};

use super::{WrLock, LOCKED_FIELD, NEXT_FIELD};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum ChainViolation {
    #[error("seq {seq}: {subqueues} sub-queues but only {unsafe_failures} unsafe failures so far")]
    TooManySubqueues { seq: u64, subqueues: usize, unsafe_failures: usize },
    #[error("seq {seq}: {in_cs} processes in the CS but only {subqueues} sub-queues")]
    CsExceedsSubqueues { seq: u64, in_cs: usize, subqueues: usize },
    #[error("seq {seq}: p{pid} is in the CS without owning a front node")]
    NotFront { seq: u64, pid: Pid },
}

#[derive(Clone, Debug)]
struct NodeRec {
    owner: Pid,
    fas_prev: Word,
    persisted: bool,
    lost: bool,
}

/// Tracks the global chain of a fresh-allocation WR-Lock step by step and
/// checks the sub-queue structure against the unsafe failures seen so far.
///
/// Must be fed the events of every step, in order, right after the step.
#[derive(Clone, Debug)]
pub struct ChainMonitor {
    lock_id: LockId,
    lock: WrLock,
    /// Appended nodes that have not been relieved yet.
    live: HashMap<Word, NodeRec>,
    last_tail: Word,
    in_cs: Vec<bool>,
    unsafe_failures: usize,
    pub max_subqueues: usize,
}

impl ChainMonitor {
    pub fn new(lock_id: LockId, lock: &WrLock) -> Self {
        ChainMonitor {
            lock_id,
            lock: lock.clone(),
            live: HashMap::new(),
            last_tail: NIL,
            in_cs: vec![false; lock.state.len() + 1],
            unsafe_failures: 0,
            max_subqueues: 0,
        }
    }

    fn relieved(mem: &Memory, node: Word) -> bool {
        let a = Addr::decode(node);
        match mem.peek(a.field(NEXT_FIELD).id) {
            NIL => false,
            LOCKED => true,
            succ => mem.peek(Addr::decode(succ).field(LOCKED_FIELD).id) == 0,
        }
    }

    pub fn observe(&mut self, mem: &Memory, events: &[Event]) -> Result<(), ChainViolation> {
        let mut seq = 0;
        for e in events {
            seq = e.seq;
            match &e.kind {
                EventKind::Crash { unsafe_for } => {
                    if unsafe_for.contains(&self.lock_id) {
                        self.unsafe_failures += 1;
                    }
                    self.in_cs[e.pid] = false;
                    for r in self.live.values_mut().filter(|r| r.owner == e.pid && !r.persisted) {
                        r.lost = true;
                    }
                }
                EventKind::Fas if e.word == Some(self.lock.tail) => {
                    let node = mem.peek(self.lock.tail);
                    self.live.insert(
                        node,
                        NodeRec { owner: e.pid, fas_prev: self.last_tail, persisted: false, lost: false },
                    );
                    self.last_tail = node;
                }
                EventKind::Cas { .. } if e.word == Some(self.lock.tail) => {
                    self.last_tail = mem.peek(self.lock.tail);
                }
                EventKind::Write if e.word == Some(self.lock.pred[e.pid - 1]) => {
                    let mine = mem.peek(self.lock.mine[e.pid - 1]);
                    let pred = mem.peek(self.lock.pred[e.pid - 1]);
                    if let Some(r) = self.live.get_mut(&mine) {
                        if r.fas_prev == pred && !r.lost {
                            r.persisted = true;
                        }
                    }
                }
                EventKind::Marker { marker, lock } if *lock == self.lock_id => match marker {
                    MarkerKind::CsBegin => self.in_cs[e.pid] = true,
                    MarkerKind::CsEnd => self.in_cs[e.pid] = false,
                    _ => {}
                },
                _ => {}
            }
        }
        self.live.retain(|&node, _| !Self::relieved(mem, node));

        let has_out_edge = |r: &NodeRec| self.live.contains_key(&r.fas_prev) && !r.lost;
        let edges = self.live.values().filter(|r| has_out_edge(r)).count();
        let subqueues = self.live.len() - edges;
        self.max_subqueues = self.max_subqueues.max(subqueues);
        if subqueues > self.unsafe_failures + 1 {
            return Err(ChainViolation::TooManySubqueues {
                seq,
                subqueues,
                unsafe_failures: self.unsafe_failures,
            });
        }
        let in_cs = self.in_cs.iter().filter(|&&b| b).count();
        if in_cs > subqueues {
            return Err(ChainViolation::CsExceedsSubqueues { seq, in_cs, subqueues });
        }
        for pid in (1..self.in_cs.len()).filter(|&p| self.in_cs[p]) {
            let mine = mem.peek(self.lock.mine[pid - 1]);
            match self.live.get(&mine) {
                Some(r) if !has_out_edge(r) => {}
                _ => return Err(ChainViolation::NotFront { seq, pid }),
            }
        }
        Ok(())
    }

    pub fn unsafe_failures(&self) -> usize {
        self.unsafe_failures
    }
}
