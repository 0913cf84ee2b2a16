use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::bounds::{BoundTracker, BoundViolation};
use crate::broadcast::BroadcastMonitor;
use crate::lockmodel::{LockKind, Topology};
use crate::simkernel::{
    Choice, Event, EventKind, LockId, MarkerKind, Pid, ProcStatus, RoundRobin, Scheduler, System,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreConfig {
    /// Maximum number of scheduling decisions on a path.
    pub max_depth: u32,
    /// Maximum number of crashes on a path.
    pub crash_budget: u32,
    /// Skip states already explored with at least as much remaining depth.
    pub memo: bool,
    /// Give up after this many expanded states (0 = unlimited).
    pub max_states: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig { max_depth: 50, crash_budget: 2, memo: true, max_states: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreViolation {
    pub message: String,
    /// Decisions from the initial state to the violation.
    pub path: Vec<Choice>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    /// States expanded.
    pub states: usize,
    /// Paths on which every process parked.
    pub complete_paths: usize,
    /// Paths cut off by the depth limit.
    pub depth_exhausted: usize,
    /// Whether `max_states` stopped the search early.
    pub truncated: bool,
    pub violation: Option<ExploreViolation>,
}

/// Property checker carried along every explored path. Its state is part
/// of the memo key, so it should only hold what future verdicts depend on.
pub trait PathMonitor: Clone + Hash {
    fn observe(&mut self, sys: &System, events: &[Event]) -> Result<(), String>;

    /// Called on every state reached; may look ahead from it.
    fn at_state(&self, _sys: &System) -> Result<(), String> {
        Ok(())
    }
}

fn choices(sys: &System, crashes_left: u32) -> Vec<Choice> {
    let mut v = Vec::new();
    for p in 1..=sys.n() {
        if sys.runnable(p) {
            v.push(Choice::Step(p));
        }
    }
    if crashes_left > 0 {
        for p in 1..=sys.n() {
            if sys.status(p) == ProcStatus::Running {
                v.push(Choice::Crash(p));
            }
        }
    }
    v
}

struct Dfs<M> {
    cfg: ExploreConfig,
    seen: HashMap<(u128, u64, u32), u32>,
    report: ExploreReport,
    path: Vec<Choice>,
    _m: std::marker::PhantomData<M>,
}

impl<M: PathMonitor> Dfs<M> {
    fn key(sys: &System, mon: &M, crashes_left: u32) -> (u128, u64, u32) {
        let mut h = DefaultHasher::new();
        mon.hash(&mut h);
        (sys.fingerprint(), h.finish(), crashes_left)
    }

    fn go(&mut self, sys: &System, mon: &M, depth_left: u32, crashes_left: u32) -> bool {
        if self.report.violation.is_some() {
            return false;
        }
        if self.cfg.max_states > 0 && self.report.states >= self.cfg.max_states {
            self.report.truncated = true;
            return false;
        }
        if self.cfg.memo {
            let k = Self::key(sys, mon, crashes_left);
            match self.seen.get(&k) {
                Some(&d) if d >= depth_left => return true,
                _ => {
                    self.seen.insert(k, depth_left);
                }
            }
        }
        self.report.states += 1;
        if let Err(message) = mon.at_state(sys) {
            self.report.violation = Some(ExploreViolation { message, path: self.path.clone() });
            return false;
        }
        if sys.all_parked() {
            self.report.complete_paths += 1;
            return true;
        }
        if depth_left == 0 {
            self.report.depth_exhausted += 1;
            return true;
        }
        for c in choices(sys, crashes_left) {
            let mut next = sys.clone();
            let mut m = mon.clone();
            let mut ev = Vec::new();
            self.path.push(c);
            let result = next.apply(c, &mut ev).map_err(|e| e.to_string()).and_then(|_| m.observe(&next, &ev));
            if let Err(message) = result {
                self.report.violation = Some(ExploreViolation { message, path: self.path.clone() });
                return false;
            }
            let used = matches!(c, Choice::Crash(_)) as u32;
            let cont = self.go(&next, &m, depth_left - 1, crashes_left - used);
            self.path.pop();
            if !cont {
                return false;
            }
        }
        true
    }
}

/// Depth-first search over every interleaving and crash placement.
pub fn explore<M: PathMonitor>(sys: &System, monitor: M, cfg: ExploreConfig) -> ExploreReport {
    let mut sys = sys.clone();
    let mut mon = monitor;
    let mut ev = Vec::new();
    let mut dfs: Dfs<M> = Dfs {
        cfg,
        seen: HashMap::new(),
        report: ExploreReport::default(),
        path: Vec::new(),
        _m: std::marker::PhantomData,
    };
    let start = sys.start(&mut ev).map_err(|e| e.to_string()).and_then(|_| mon.observe(&sys, &ev));
    if let Err(message) = start {
        dfs.report.violation = Some(ExploreViolation { message, path: Vec::new() });
        return dfs.report;
    }
    dfs.go(&sys, &mon, cfg.max_depth, cfg.crash_budget);
    dfs.report
}

/// Responsiveness bookkeeping for one weakly recoverable lock.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct WeakTrack {
    lock: LockId,
    in_sp: u64,
    in_cs: u64,
    /// Per active unsafe consequence interval: processes whose super-passage
    /// must still complete.
    intervals: Vec<u64>,
}

/// ME for strongly recoverable locks, responsiveness for weakly recoverable
/// ones, step bounds for all of them, and arbitrator port contracts.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LockMonitor {
    strong: Vec<(LockId, u64)>,
    weak: Vec<WeakTrack>,
    bounds: Vec<BoundTracker>,
}

impl LockMonitor {
    pub fn new(topology: &Topology) -> Self {
        let mut strong = Vec::new();
        let mut weak = Vec::new();
        for l in &topology.locks {
            if l.kind == LockKind::Wr {
                weak.push(WeakTrack { lock: l.id, in_sp: 0, in_cs: 0, intervals: Vec::new() });
            } else {
                strong.push((l.id, 0));
            }
        }
        let bounds = topology.locks.iter().map(|l| BoundTracker::new(l.id, l.bounds, topology.n)).collect();
        LockMonitor { strong, weak, bounds }
    }

    /// Without step-bound tracking (smaller memo keys).
    pub fn without_bounds(mut self) -> Self {
        self.bounds.clear();
        self
    }
}

fn bit(p: Pid) -> u64 {
    1 << p
}

impl PathMonitor for LockMonitor {
    fn observe(&mut self, _sys: &System, events: &[Event]) -> Result<(), String> {
        for e in events {
            let b = bit(e.pid);
            match &e.kind {
                EventKind::Crash { unsafe_for } => {
                    for (_, cs) in &mut self.strong {
                        *cs &= !b;
                    }
                    for w in &mut self.weak {
                        w.in_cs &= !b;
                        if unsafe_for.contains(&w.lock) && w.in_sp != 0 {
                            w.intervals.push(w.in_sp);
                            w.intervals.sort_unstable();
                        }
                    }
                }
                EventKind::Marker { marker, lock } => {
                    if *marker == MarkerKind::PortViolation {
                        return Err(format!("seq {}: p{} found arbitrator {lock:?} port taken", e.seq, e.pid));
                    }
                    if let Some((_, cs)) = self.strong.iter_mut().find(|(l, _)| l == lock) {
                        match marker {
                            MarkerKind::CsBegin => {
                                if *cs & !b != 0 {
                                    return Err(format!(
                                        "seq {}: p{} entered the CS of {lock:?} while it was occupied ({:#b})",
                                        e.seq, e.pid, cs
                                    ));
                                }
                                *cs |= b;
                            }
                            MarkerKind::CsEnd => *cs &= !b,
                            _ => {}
                        }
                    }
                    if let Some(w) = self.weak.iter_mut().find(|w| w.lock == *lock) {
                        match marker {
                            MarkerKind::RecoverBegin => w.in_sp |= b,
                            MarkerKind::CsBegin => {
                                w.in_cs |= b;
                                let occupied = w.in_cs.count_ones() as usize;
                                if occupied > 1 + w.intervals.len() {
                                    return Err(format!(
                                        "seq {}: {occupied} processes in the CS of {lock:?} with {} active unsafe intervals",
                                        e.seq,
                                        w.intervals.len()
                                    ));
                                }
                            }
                            MarkerKind::CsEnd => w.in_cs &= !b,
                            MarkerKind::ExitEnd => {
                                w.in_sp &= !b;
                                for m in &mut w.intervals {
                                    *m &= !b;
                                }
                                w.intervals.retain(|&m| m != 0);
                                let occupied = w.in_cs.count_ones() as usize;
                                if occupied > 1 + w.intervals.len() {
                                    return Err(format!(
                                        "seq {}: {occupied} processes in the CS of {lock:?} after a consequence interval ended",
                                        e.seq
                                    ));
                                }
                            }
                            _ => {}
                        }
                    }
                }
                _ => {}
            }
        }
        let mut out: Vec<BoundViolation> = Vec::new();
        for t in &mut self.bounds {
            t.observe(events, &mut out);
        }
        if let Some(v) = out.first() {
            return Err(format!(
                "seq {}: p{} took {} steps in {:?} of {:?}, bound {}",
                v.seq, v.pid, v.steps, v.kind, v.lock, v.bound
            ));
        }
        Ok(())
    }
}

/// Safety and liveness of one broadcast object. Liveness is checked by
/// letting every process run crash-free from each state where no Set is in
/// progress: every open Wait covered by a completed Set must return.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BroadcastPathMonitor {
    pub inner: BroadcastMonitor,
    pub owner: Pid,
    pub liveness_steps: u32,
    set_open: bool,
}

impl BroadcastPathMonitor {
    pub fn new(inner: BroadcastMonitor, owner: Pid) -> Self {
        BroadcastPathMonitor { inner, owner, liveness_steps: 2000, set_open: false }
    }
}

impl PathMonitor for BroadcastPathMonitor {
    fn observe(&mut self, _sys: &System, events: &[Event]) -> Result<(), String> {
        for e in events {
            match e.kind {
                EventKind::Marker { marker: MarkerKind::SetBegin(_), .. } => self.set_open = true,
                EventKind::Marker { marker: MarkerKind::SetEnd(_), .. } => self.set_open = false,
                EventKind::Crash { .. } if e.pid == self.owner => self.set_open = false,
                _ => {}
            }
        }
        self.inner.observe(events).map_err(|v| v.to_string())
    }

    fn at_state(&self, sys: &System) -> Result<(), String> {
        if self.set_open || self.inner.blocked().is_empty() {
            return Ok(());
        }
        // Run everyone crash-free until the Waits covered by a completed Set have returned.
        let mut sys = sys.clone();
        let mut mon = self.inner.clone();
        let mut rr = RoundRobin::default();
        for _ in 0..self.liveness_steps {
            if mon.blocked().is_empty() {
                return Ok(());
            }
            let Some(Choice::Step(pid) | Choice::Crash(pid)) = rr.choose(&sys) else { break };
            let mut ev = Vec::new();
            sys.apply(Choice::Step(pid), &mut ev).map_err(|e| e.to_string())?;
            mon.observe(&ev).map_err(|v| v.to_string())?;
        }
        match mon.blocked().first() {
            Some(v) => Err(v.to_string()),
            None => Ok(()),
        }
    }
}
