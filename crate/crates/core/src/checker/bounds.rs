use serde::{Deserialize, Serialize};

use crate::lockmodel::Topology;
use crate::simkernel::{EventKind, History, LockId, MarkerKind, Pid, StepBounds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Exit,
    Recover,
    /// From RecoverBegin to CsBegin after a crash inside the CS.
    Reenter,
    /// From EnterBegin to DoorwayEnd.
    Doorway,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub lock: LockId,
    pub pid: Pid,
    pub kind: BoundKind,
    /// Seq of the marker that closed (or would have closed) the segment.
    pub seq: u64,
    pub steps: u32,
    pub bound: u32,
}

/// Incremental own-step counters of every process for one lock.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoundTracker {
    pub lock: LockId,
    pub bounds: StepBounds,
    /// Optional doorway bound.
    pub doorway: Option<u32>,
    open: Vec<Option<(BoundKind, u32)>>,
    /// Crashed inside the CS and not yet back in it.
    reentering: Vec<bool>,
    in_cs: Vec<bool>,
}

impl BoundTracker {
    pub fn new(lock: LockId, bounds: StepBounds, n: usize) -> Self {
        BoundTracker {
            lock,
            bounds,
            doorway: None,
            open: vec![None; n + 1],
            reentering: vec![false; n + 1],
            in_cs: vec![false; n + 1],
        }
    }

    fn bound(&self, k: BoundKind) -> u32 {
        match k {
            BoundKind::Exit => self.bounds.exit,
            BoundKind::Recover => self.bounds.recover,
            BoundKind::Reenter => self.bounds.reenter,
            BoundKind::Doorway => self.doorway.unwrap_or(u32::MAX),
        }
    }

    fn close(&mut self, pid: Pid, kind: BoundKind, seq: u64, out: &mut Vec<BoundViolation>) {
        if let Some((k, steps)) = self.open[pid] {
            if k == kind {
                self.open[pid] = None;
                if steps > self.bound(k) {
                    out.push(BoundViolation { lock: self.lock, pid, kind: k, seq, steps, bound: self.bound(k) });
                }
            }
        }
    }

    pub fn observe(&mut self, events: &[crate::simkernel::Event], out: &mut Vec<BoundViolation>) {
        for e in events {
            let p = e.pid;
            match &e.kind {
                k if k.is_step() => {
                    if let Some((_, s)) = &mut self.open[p] {
                        *s += 1;
                    }
                    // A second segment may be counted in parallel: reentry spans Recover and Enter.
                }
                EventKind::Crash { .. } => {
                    self.open[p] = None;
                    if self.in_cs[p] {
                        self.reentering[p] = true;
                    }
                    self.in_cs[p] = false;
                }
                EventKind::Marker { marker, lock } if *lock == self.lock => match marker {
                    MarkerKind::RecoverBegin if self.reentering[p] => self.open[p] = Some((BoundKind::Reenter, 0)),
                    MarkerKind::RecoverBegin => self.open[p] = Some((BoundKind::Recover, 0)),
                    MarkerKind::RecoverEnd => self.close(p, BoundKind::Recover, e.seq, out),
                    MarkerKind::EnterBegin if self.doorway.is_some() && !self.reentering[p] => {
                        self.open[p] = Some((BoundKind::Doorway, 0))
                    }
                    MarkerKind::DoorwayEnd => self.close(p, BoundKind::Doorway, e.seq, out),
                    MarkerKind::CsBegin => {
                        self.close(p, BoundKind::Reenter, e.seq, out);
                        self.open[p] = None;
                        self.reentering[p] = false;
                        self.in_cs[p] = true;
                    }
                    MarkerKind::CsEnd => self.in_cs[p] = false,
                    MarkerKind::ExitBegin => self.open[p] = Some((BoundKind::Exit, 0)),
                    MarkerKind::ExitEnd => self.close(p, BoundKind::Exit, e.seq, out),
                    _ => {}
                },
                _ => {}
            }
        }
    }
}

/// Checks BE, BR and BCSR of every lock in the topology.
pub fn check_step_bounds(h: &History, topology: &Topology) -> Vec<BoundViolation> {
    let mut out = Vec::new();
    for l in &topology.locks {
        let mut t = BoundTracker::new(l.id, l.bounds, topology.n);
        t.observe(&h.events, &mut out);
    }
    out.sort_by_key(|v| (v.seq, v.lock, v.pid));
    out
}
