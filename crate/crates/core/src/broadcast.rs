//! A recoverable single-writer counter with blocking waits.
//!
//! The owner calls `Set(x)` with non-decreasing, incremental arguments; any
//! other process may call `Wait(x)` to block until the counter reaches `x`.
//! The CC variant is a single word. The DSM variant spins on local words only
//! and wakes waiters through a chain built in the owner's memory.

use serde::{Deserialize, Serialize};

use crate::simkernel::{
    cas, read, write, Action, Addr, Ctx, Event, EventKind, Frame, History, MarkerKind, Memory, ObjectTable, ObjId,
    Pid, RmrModel, SimError, SimObject, System, Word, WordId,
};

pub const SET: u8 = 10;
pub const WAIT: u8 = 11;
pub const READ: u8 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BroadcastKind {
    Cc,
    Dsm,
}

#[derive(Clone, Debug)]
pub struct BroadcastCc {
    pub owner: Pid,
    pub count: WordId,
}

impl BroadcastCc {
    pub fn new(mem: &mut Memory, owner: Pid) -> Result<Self, SimError> {
        Ok(BroadcastCc { owner, count: mem.alloc_word(owner, 0)? })
    }

    /// Current value without accounting.
    pub fn peek(&self, mem: &Memory) -> Word {
        mem.peek(self.count)
    }
}

impl SimObject for BroadcastCc {
    fn name(&self) -> String {
        format!("broadcast-cc[p{}]", self.owner)
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let count = Addr::plain(self.count);
        let x = f.regs[0];
        match (f.routine, f.pc) {
            (READ, 0) => f.go(1, read(count)),
            (READ, 1) => Action::Ret(f.acc),

            (SET, 0) => {
                assert_eq!(ctx.pid, self.owner, "Set by a non-owner");
                f.go(1, Action::Mark(MarkerKind::SetBegin(x)))
            }
            (SET, 1) => f.go(2, read(count)),
            (SET, 2) if f.acc >= x => f.go(4, Action::Mark(MarkerKind::SetEnd(x))),
            (SET, 2) => f.go(3, write(count, x)),
            (SET, 3) => f.go(4, Action::Mark(MarkerKind::SetEnd(x))),
            (SET, 4) => Action::Ret(0),

            (WAIT, 0) => {
                assert_ne!(ctx.pid, self.owner, "Wait by the owner");
                f.go(1, Action::Mark(MarkerKind::WaitBegin(x)))
            }
            (WAIT, 1) => f.go(2, read(count)),
            (WAIT, 2) if f.acc < x => read(count),
            (WAIT, 2) => f.go(3, Action::Mark(MarkerKind::WaitEnd(x))),
            (WAIT, 3) => Action::Ret(0),
            (r, pc) => unreachable!("broadcast-cc routine {r} pc {pc}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BroadcastDsm {
    pub owner: Pid,
    pub a: WordId,
    pub b: WordId,
    /// Indexed by pid - 1; homed at the owner.
    pub announce: Vec<WordId>,
    /// Indexed by pid - 1; homed at the owner.
    pub wakeup: Vec<WordId>,
    /// Indexed by pid - 1; entry `i` homed at process `i`.
    pub target: Vec<WordId>,
}

const J: usize = 3;
const PREV: usize = 4;
const FIRST: usize = 5;

impl BroadcastDsm {
    pub fn new(mem: &mut Memory, owner: Pid) -> Result<Self, SimError> {
        let n = mem.n();
        let a = mem.alloc_word(owner, 0)?;
        let b = mem.alloc_word(owner, 0)?;
        let mut announce = Vec::with_capacity(n);
        let mut wakeup = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n);
        for i in 1..=n {
            announce.push(mem.alloc_word(owner, 0)?);
            wakeup.push(mem.alloc_word(owner, 0)?);
            target.push(mem.alloc_word(i, 0)?);
        }
        Ok(BroadcastDsm { owner, a, b, announce, wakeup, target })
    }

    pub fn peek(&self, mem: &Memory) -> Word {
        mem.peek(self.b)
    }

    fn ann(&self, i: Word) -> Addr {
        Addr::plain(self.announce[i as usize - 1])
    }

    fn wake(&self, i: Word) -> Addr {
        Addr::plain(self.wakeup[i as usize - 1])
    }

    fn tgt(&self, i: Word) -> Addr {
        Addr::plain(self.target[i as usize - 1])
    }

    /// Next scan index at or below `j` that is not the owner; 0 when exhausted.
    fn skip_owner(&self, j: Word) -> Word {
        if j as usize == self.owner {
            j - 1
        } else {
            j
        }
    }
}

impl SimObject for BroadcastDsm {
    fn name(&self) -> String {
        format!("broadcast-dsm[p{}]", self.owner)
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let x = f.regs[0];
        let me = ctx.pid as Word;
        loop {
            match (f.routine, f.pc) {
                (READ, 0) => return f.go(1, read(Addr::plain(self.b))),
                (READ, 1) => return Action::Ret(f.acc),

                (SET, 0) => {
                    assert_eq!(ctx.pid, self.owner, "Set by a non-owner");
                    return f.go(1, Action::Mark(MarkerKind::SetBegin(x)));
                }
                (SET, 1) => return f.go(2, read(Addr::plain(self.b))),
                (SET, 2) if f.acc >= x => f.pc = 20,
                (SET, 2) => {
                    f.regs[J] = ctx.n as Word;
                    f.regs[PREV] = 0;
                    f.regs[FIRST] = 0;
                    return f.go(3, write(Addr::plain(self.a), x));
                }
                // Scan announce[] in descending id order.
                (SET, 3) => {
                    let j = self.skip_owner(f.regs[J]);
                    f.regs[J] = j;
                    if j == 0 {
                        f.pc = 10;
                    } else {
                        return f.go(4, read(self.ann(j)));
                    }
                }
                (SET, 4) => {
                    let j = f.regs[J];
                    if f.acc != x {
                        f.regs[J] = j - 1;
                        f.pc = 3;
                    } else if f.regs[PREV] == 0 {
                        f.regs[FIRST] = j;
                        f.regs[PREV] = j;
                        f.regs[J] = j - 1;
                        f.pc = 3;
                    } else {
                        return f.go(5, write(self.wake(f.regs[PREV]), j));
                    }
                }
                (SET, 5) => return f.go(6, read(self.ann(f.regs[PREV]))),
                (SET, 6) => {
                    let j = f.regs[J];
                    f.regs[PREV] = j;
                    f.regs[J] = j - 1;
                    if f.acc != x {
                        // The previous waiter may have left before seeing its
                        // wakeup entry; release `j` directly.
                        return f.go(3, cas(self.tgt(j), x, 0));
                    }
                    f.pc = 3;
                }
                (SET, 10) if f.regs[PREV] == 0 => f.pc = 12,
                (SET, 10) => return f.go(11, write(self.wake(f.regs[PREV]), 0)),
                (SET, 11) => return f.go(12, cas(self.tgt(f.regs[FIRST]), x, 0)),
                (SET, 12) => return f.go(20, write(Addr::plain(self.b), x)),
                (SET, 20) => return f.go(21, Action::Mark(MarkerKind::SetEnd(x))),
                (SET, 21) => return Action::Ret(0),

                (WAIT, 0) => {
                    assert_ne!(ctx.pid, self.owner, "Wait by the owner");
                    return f.go(1, Action::Mark(MarkerKind::WaitBegin(x)));
                }
                (WAIT, 1) => return f.go(2, write(self.tgt(me), x)),
                (WAIT, 2) => return f.go(3, write(self.ann(me), x)),
                (WAIT, 3) => return f.go(4, read(Addr::plain(self.a))),
                (WAIT, 4) if f.acc >= x => return f.go(5, write(self.tgt(me), 0)),
                (WAIT, 4) => f.pc = 5,
                (WAIT, 5) => return f.go(6, read(self.tgt(me))),
                (WAIT, 6) if f.acc != 0 => return read(self.tgt(me)),
                (WAIT, 6) => return f.go(7, write(self.ann(me), 0)),
                (WAIT, 7) => return f.go(8, read(self.wake(me))),
                (WAIT, 8) if f.acc > 0 => return f.go(9, cas(self.tgt(f.acc), x, 0)),
                (WAIT, 8) => f.pc = 9,
                (WAIT, 9) => return f.go(10, Action::Mark(MarkerKind::WaitEnd(x))),
                (WAIT, 10) => return Action::Ret(0),
                (r, pc) => unreachable!("broadcast-dsm routine {r} pc {pc}"),
            }
        }
    }
}

/// Test driver: the owner performs `Set(1..=ops)`, every other process
/// performs `Wait(1..=ops)`. The persistent request counter doubles as the
/// operation index, so a crashed operation is retried with the same argument.
#[derive(Clone, Debug)]
pub struct BroadcastProgram {
    pub object: ObjId,
    pub owner: Pid,
    pub ops: u32,
}

impl SimObject for BroadcastProgram {
    fn name(&self) -> String {
        "broadcast-program".into()
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        match f.pc {
            0 if ctx.requests_remaining == 0 => Action::Park,
            0 => f.go(1, Action::Local),
            1 => {
                let x = (self.ops - ctx.requests_remaining + 1) as Word;
                let routine = if ctx.pid == self.owner { SET } else { WAIT };
                f.go(2, Action::Call { obj: self.object, routine, args: [x, 0, 0] })
            }
            2 => f.go(0, Action::CompleteRequest),
            pc => unreachable!("broadcast program pc {pc}"),
        }
    }
}

/// Test driver: every process calls `Read` once per request.
#[derive(Clone, Debug)]
pub struct ReadProgram {
    pub object: ObjId,
}

impl SimObject for ReadProgram {
    fn name(&self) -> String {
        "broadcast-reader".into()
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        match f.pc {
            0 if ctx.requests_remaining == 0 => Action::Park,
            0 => f.go(1, Action::Local),
            1 => f.go(2, Action::Call { obj: self.object, routine: READ, args: [0; 3] }),
            2 => f.go(0, Action::CompleteRequest),
            pc => unreachable!("broadcast reader pc {pc}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Set,
    Wait,
}

/// Cost of one completed Set or Wait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCost {
    pub pid: Pid,
    pub kind: OpKind,
    pub x: Word,
    pub begin: u64,
    pub end: u64,
    pub rmr: u64,
    pub steps: u64,
    /// For a Set: no waiter released itself or crashed while it ran.
    /// Always true for a Wait.
    pub churn_free: bool,
}

#[derive(Clone, Copy)]
struct Open {
    cost: OpCost,
    first_write: Option<WordId>,
}

/// Per-operation RMR and step counts of the Sets and Waits of `object`
/// that completed without a crash.
///
/// A waiter releases itself when it writes its first-written word a second
/// time (the DSM variant clears its own target word after seeing the new
/// value in the announce phase).
pub fn op_costs(h: &History, object: ObjId) -> Vec<OpCost> {
    let mut open: std::collections::HashMap<Pid, Open> = Default::default();
    let mut churn = Vec::new();
    let mut out = Vec::new();
    for e in &h.events {
        match e.kind {
            EventKind::Crash { .. } => {
                if let Some(o) = open.remove(&e.pid) {
                    if o.cost.kind == OpKind::Wait {
                        churn.push(e.seq);
                    }
                }
            }
            EventKind::Marker { marker, lock } if lock == object => {
                let begin = |kind, x| Open {
                    cost: OpCost { pid: e.pid, kind, x, begin: e.seq, end: e.seq, rmr: 0, steps: 0, churn_free: true },
                    first_write: None,
                };
                match marker {
                    MarkerKind::SetBegin(x) => {
                        open.insert(e.pid, begin(OpKind::Set, x));
                    }
                    MarkerKind::WaitBegin(x) => {
                        open.insert(e.pid, begin(OpKind::Wait, x));
                    }
                    MarkerKind::SetEnd(_) | MarkerKind::WaitEnd(_) => {
                        if let Some(mut o) = open.remove(&e.pid) {
                            o.cost.end = e.seq;
                            out.push(o.cost);
                        }
                    }
                    _ => {}
                }
            }
            _ if e.kind.is_step() => {
                if let Some(o) = open.get_mut(&e.pid) {
                    o.cost.steps += 1;
                    o.cost.rmr += e.rmr as u64;
                    if o.cost.kind == OpKind::Wait && e.kind == EventKind::Write {
                        match o.first_write {
                            None => o.first_write = e.word,
                            Some(w) if e.word == Some(w) => churn.push(e.seq),
                            Some(_) => {}
                        }
                    }
                }
            }
            _ => {}
        }
    }
    for c in &mut out {
        if c.kind == OpKind::Set {
            c.churn_free = !churn.iter().any(|&t| c.begin <= t && t <= c.end);
        }
    }
    out
}

/// A system of `n` processes running [`BroadcastProgram`] over one fresh
/// broadcast object owned by `owner`.
pub fn harness(
    n: usize,
    owner: Pid,
    ops: u32,
    kind: BroadcastKind,
    model: RmrModel,
) -> Result<(System, ObjId), SimError> {
    let mut mem = Memory::new(n, model);
    let mut table = ObjectTable::new();
    let object = match kind {
        BroadcastKind::Cc => table.add(Box::new(BroadcastCc::new(&mut mem, owner)?)),
        BroadcastKind::Dsm => table.add(Box::new(BroadcastDsm::new(&mut mem, owner)?)),
    };
    let prog = table.add(Box::new(BroadcastProgram { object, owner, ops }));
    Ok((System::new(table.freeze(), mem, &vec![(prog, ops); n]), object))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum BroadcastViolation {
    #[error("seq {seq}: p{pid} returned from Wait({x}) before any Set({x}) began")]
    EarlyReturn { seq: u64, pid: Pid, x: Word },
    #[error("p{pid} still blocked in Wait({x}) after Set({set}) completed")]
    Blocked { pid: Pid, x: Word, set: Word },
    #[error("seq {seq}: Set({x}) after Set({prev}) is not incremental")]
    NotIncremental { seq: u64, x: Word, prev: Word },
}

/// Incremental monitor for one broadcast object: safety of every Wait return
/// and legality of the owner's Set arguments.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BroadcastMonitor {
    pub object: Option<ObjId>,
    /// Largest argument of any Set invocation so far.
    pub max_set_begun: Word,
    /// Largest argument of any completed Set.
    pub max_set_done: Word,
    last_set: Option<Word>,
    /// Open Wait per process (`0` = none).
    pub waiting: Vec<Word>,
}

impl BroadcastMonitor {
    pub fn new(object: ObjId, n: usize) -> Self {
        BroadcastMonitor { object: Some(object), waiting: vec![0; n + 1], ..Default::default() }
    }

    pub fn observe(&mut self, events: &[Event]) -> Result<(), BroadcastViolation> {
        for e in events {
            match &e.kind {
                EventKind::Crash { .. } => self.waiting[e.pid] = 0,
                EventKind::Marker { marker, lock } if Some(*lock) == self.object => match *marker {
                    MarkerKind::SetBegin(x) => {
                        if let Some(prev) = self.last_set {
                            if x < prev || x > prev + 1 {
                                return Err(BroadcastViolation::NotIncremental { seq: e.seq, x, prev });
                            }
                        }
                        self.last_set = Some(x);
                        self.max_set_begun = self.max_set_begun.max(x);
                    }
                    MarkerKind::SetEnd(x) => self.max_set_done = self.max_set_done.max(x),
                    MarkerKind::WaitBegin(x) => self.waiting[e.pid] = x,
                    MarkerKind::WaitEnd(x) => {
                        if x > self.max_set_begun {
                            return Err(BroadcastViolation::EarlyReturn { seq: e.seq, pid: e.pid, x });
                        }
                        self.waiting[e.pid] = 0;
                    }
                    _ => {}
                },
                _ => {}
            }
        }
        Ok(())
    }

    /// Waits that are still open although a Set covering them has completed.
    pub fn blocked(&self) -> Vec<BroadcastViolation> {
        self.waiting
            .iter()
            .enumerate()
            .filter(|&(_, &x)| x != 0 && x <= self.max_set_done)
            .map(|(pid, &x)| BroadcastViolation::Blocked { pid, x, set: self.max_set_done })
            .collect()
    }
}

/// Checks a complete history of one broadcast object.
pub fn check_history(h: &History, object: ObjId, n: usize) -> Vec<BroadcastViolation> {
    let mut m = BroadcastMonitor::new(object, n);
    let mut out = Vec::new();
    for e in &h.events {
        if let Err(v) = m.observe(std::slice::from_ref(e)) {
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests;
