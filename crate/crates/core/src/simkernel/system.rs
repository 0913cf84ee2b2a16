use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::event::{Event, EventKind, MarkerKind, ObjId};
use super::machine::{Action, Ctx, Frame, Segment, SimObject, ENTER};
use super::memory::{Addr, Instr, Memory, Pid, WordId};
use super::SimError;

/// Registry of simulated objects. Ids are handed out before construction so
/// that composite objects can refer to their components.
#[derive(Debug, Default)]
pub struct ObjectTable {
    slots: Vec<Option<Box<dyn SimObject>>>,
}

impl ObjectTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reserve(&mut self) -> ObjId {
        self.slots.push(None);
        ObjId((self.slots.len() - 1) as u16)
    }

    pub fn set(&mut self, id: ObjId, obj: Box<dyn SimObject>) {
        self.slots[id.0 as usize] = Some(obj);
    }

    pub fn add(&mut self, obj: Box<dyn SimObject>) -> ObjId {
        let id = self.reserve();
        self.set(id, obj);
        id
    }

    pub fn get(&self, id: ObjId) -> Option<&dyn SimObject> {
        self.slots.get(id.0 as usize).and_then(|s| s.as_deref())
    }

    pub fn freeze(self) -> Arc<[Box<dyn SimObject>]> {
        self.slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.unwrap_or_else(|| panic!("object slot {i} reserved but never set")))
            .collect::<Vec<_>>()
            .into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcStatus {
    Running,
    Crashed,
    /// In the NCS with no requests left.
    Parked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pending {
    Mem(Instr, Addr),
    Local,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Proc {
    pub status: ProcStatus,
    pub stack: Vec<Frame>,
    pub pending: Option<Pending>,
    pub requests: u32,
    pub program: ObjId,
}

/// A scheduling decision. Stepping a crashed process restarts it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    Step(Pid),
    Crash(Pid),
}

/// Upper bound on non-instruction actions between two instructions of one process.
const DRAIN_LIMIT: usize = 10_000;

#[derive(Clone)]
pub struct System {
    objects: Arc<[Box<dyn SimObject>]>,
    mem: Memory,
    procs: Vec<Proc>,
    next_seq: u64,
    started: bool,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System").field("n", &self.procs.len()).field("next_seq", &self.next_seq).finish()
    }
}

impl System {
    /// `programs[p-1]` is the top-level program object of process `p` and its request count.
    pub fn new(objects: Arc<[Box<dyn SimObject>]>, mem: Memory, programs: &[(ObjId, u32)]) -> Self {
        assert_eq!(programs.len(), mem.n(), "one program per process");
        let procs = programs
            .iter()
            .map(|&(program, requests)| Proc {
                status: ProcStatus::Running,
                stack: Vec::new(),
                pending: None,
                requests,
                program,
            })
            .collect();
        System { objects, mem, procs, next_seq: 0, started: false }
    }

    /// Puts every process at the top of its NCS. Must be called once before stepping.
    pub fn start(&mut self, out: &mut Vec<Event>) -> Result<(), SimError> {
        assert!(!self.started, "system already started");
        self.started = true;
        for pid in 1..=self.n() {
            self.boot(pid, out)?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.procs.len()
    }

    pub fn mem(&self) -> &Memory {
        &self.mem
    }

    pub fn mem_mut(&mut self) -> &mut Memory {
        &mut self.mem
    }

    pub fn objects(&self) -> &Arc<[Box<dyn SimObject>]> {
        &self.objects
    }

    pub fn object(&self, id: ObjId) -> &dyn SimObject {
        self.objects[id.0 as usize].as_ref()
    }

    pub fn proc(&self, pid: Pid) -> &Proc {
        &self.procs[pid - 1]
    }

    pub fn status(&self, pid: Pid) -> ProcStatus {
        self.procs[pid - 1].status
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn runnable(&self, pid: Pid) -> bool {
        matches!(self.status(pid), ProcStatus::Running | ProcStatus::Crashed)
    }

    pub fn all_parked(&self) -> bool {
        self.procs.iter().all(|p| p.status == ProcStatus::Parked)
    }

    pub fn apply(&mut self, choice: Choice, out: &mut Vec<Event>) -> Result<(), SimError> {
        match choice {
            Choice::Step(pid) => self.step(pid, out),
            Choice::Crash(pid) => self.crash(pid, out),
        }
    }

    /// Executes one step of `pid`: its pending instruction or local step, or a
    /// restart if it is crashed.
    pub fn step(&mut self, pid: Pid, out: &mut Vec<Event>) -> Result<(), SimError> {
        debug_assert!(self.started);
        match self.status(pid) {
            ProcStatus::Crashed => return self.restart(pid, out),
            ProcStatus::Parked => return Err(SimError::NotRunnable { pid }),
            ProcStatus::Running => {}
        }
        let pending = self.procs[pid - 1].pending.take().ok_or(SimError::NotRunnable { pid })?;
        match pending {
            Pending::Local => self.emit(out, pid, EventKind::LocalStep, None, false),
            Pending::Mem(instr, addr) => {
                let o = self.mem.access(pid, instr, addr)?;
                let kind = match instr {
                    Instr::Read => EventKind::Read,
                    Instr::Write(_) => EventKind::Write,
                    Instr::Cas { .. } => EventKind::Cas { success: o.result == 1 },
                    Instr::Fas(_) => EventKind::Fas,
                };
                self.emit(out, pid, kind, Some(addr.id), o.rmr);
                let top = self.procs[pid - 1].stack.last_mut().expect("pending step without a frame");
                top.acc = o.result;
            }
        }
        self.drain(pid, out)
    }

    pub fn crash(&mut self, pid: Pid, out: &mut Vec<Event>) -> Result<(), SimError> {
        if self.status(pid) == ProcStatus::Crashed {
            return Err(SimError::DoubleCrash { pid });
        }
        let unsafe_for = self.sensitive_locks(pid);
        self.emit(out, pid, EventKind::Crash { unsafe_for }, None, false);
        let p = &mut self.procs[pid - 1];
        p.stack.clear();
        p.pending = None;
        p.status = ProcStatus::Crashed;
        Ok(())
    }

    pub fn restart(&mut self, pid: Pid, out: &mut Vec<Event>) -> Result<(), SimError> {
        if self.status(pid) != ProcStatus::Crashed {
            return Err(SimError::RestartWithoutCrash { pid });
        }
        self.emit(out, pid, EventKind::Restart, None, false);
        self.boot(pid, out)
    }

    /// Locks for which a crash of `pid` right now would be unsafe.
    pub fn sensitive_locks(&self, pid: Pid) -> Vec<ObjId> {
        self.procs[pid - 1]
            .stack
            .iter()
            .filter(|f| self.object(f.obj).sensitive(f))
            .map(|f| f.obj)
            .collect()
    }

    /// Hash of everything that influences future behavior: shared values,
    /// private frames, statuses and request counters. Accounting state (cache
    /// sets, sequence numbers) is excluded.
    pub fn fingerprint(&self) -> u128 {
        let mut a = DefaultHasher::new();
        let mut b = DefaultHasher::new();
        0xa5u8.hash(&mut b);
        self.hash_into(&mut a);
        self.hash_into(&mut b);
        ((a.finish() as u128) << 64) | b.finish() as u128
    }

    pub fn hash_into<H: Hasher>(&self, h: &mut H) {
        self.mem.hash_behavior(h);
        self.procs.hash(h);
    }

    fn boot(&mut self, pid: Pid, out: &mut Vec<Event>) -> Result<(), SimError> {
        let p = &mut self.procs[pid - 1];
        p.status = ProcStatus::Running;
        p.stack.clear();
        p.pending = None;
        p.stack.push(Frame::new(p.program, 0, [0; 3]));
        self.drain(pid, out)
    }

    fn emit(&mut self, out: &mut Vec<Event>, pid: Pid, kind: EventKind, word: Option<WordId>, rmr: bool) {
        out.push(Event { seq: self.next_seq, pid, kind, word, rmr });
        self.next_seq += 1;
    }

    fn mark(&mut self, out: &mut Vec<Event>, pid: Pid, marker: MarkerKind, lock: ObjId) {
        self.emit(out, pid, EventKind::Marker { marker, lock }, None, false);
    }

    /// Runs non-instruction actions until the process needs a scheduled step.
    fn drain(&mut self, pid: Pid, out: &mut Vec<Event>) -> Result<(), SimError> {
        let objects = Arc::clone(&self.objects);
        for _ in 0..DRAIN_LIMIT {
            let p = &mut self.procs[pid - 1];
            let ctx = Ctx { pid, n: self.mem.n(), requests_remaining: p.requests };
            let top = p.stack.last_mut().ok_or(SimError::NotRunnable { pid })?;
            let obj = top.obj;
            let action = objects[obj.0 as usize].step(&ctx, top);
            match action {
                Action::Mem(instr, addr) => {
                    p.pending = Some(Pending::Mem(instr, addr));
                    return Ok(());
                }
                Action::Local => {
                    p.pending = Some(Pending::Local);
                    return Ok(());
                }
                Action::Park => {
                    p.pending = None;
                    p.status = ProcStatus::Parked;
                    return Ok(());
                }
                Action::Call { obj: callee, routine, args } => {
                    p.stack.push(Frame::new(callee, routine, args));
                    match objects[callee.0 as usize].segment(routine) {
                        Some(Segment::Recover) => self.mark(out, pid, MarkerKind::RecoverBegin, callee),
                        Some(Segment::Enter) => self.mark(out, pid, MarkerKind::EnterBegin, callee),
                        Some(Segment::Exit) => {
                            self.mark(out, pid, MarkerKind::CsEnd, callee);
                            self.mark(out, pid, MarkerKind::ExitBegin, callee);
                        }
                        None => {}
                    }
                }
                Action::Ret(v) => {
                    let f = p.stack.pop().expect("non-empty stack");
                    let parent = p.stack.last_mut().ok_or(SimError::NotRunnable { pid })?;
                    parent.acc = v;
                    match objects[f.obj.0 as usize].segment(f.routine) {
                        Some(Segment::Recover) => self.mark(out, pid, MarkerKind::RecoverEnd, f.obj),
                        Some(Segment::Enter) => self.mark(out, pid, MarkerKind::CsBegin, f.obj),
                        Some(Segment::Exit) => self.mark(out, pid, MarkerKind::ExitEnd, f.obj),
                        None => {}
                    }
                }
                Action::Mark(m) => self.mark(out, pid, m, obj),
                Action::MarkFor(m, lock) => self.mark(out, pid, m, lock),
                Action::Doorway => {
                    self.mark(out, pid, MarkerKind::DoorwayEnd, obj);
                    let stack = &self.procs[pid - 1].stack;
                    let mut child = obj;
                    let mut owners = Vec::new();
                    for f in stack.iter().rev().skip(1) {
                        if f.routine == ENTER && objects[f.obj.0 as usize].doorway_delegate() == Some(child) {
                            owners.push(f.obj);
                            child = f.obj;
                        } else {
                            break;
                        }
                    }
                    for o in owners {
                        self.mark(out, pid, MarkerKind::DoorwayEnd, o);
                    }
                }
                Action::AllocNode { init } => {
                    let a = self.mem.alloc_node(pid, &init)?;
                    self.procs[pid - 1].stack.last_mut().unwrap().acc = a.encode();
                }
                Action::RenewNode { base, init } => {
                    let a = self.mem.renew_block(base, &init)?;
                    self.procs[pid - 1].stack.last_mut().unwrap().acc = a.encode();
                }
                Action::FreeNode { base } => self.mem.free_block(base, 2)?,
                Action::CompleteRequest => {
                    p.requests = p.requests.saturating_sub(1);
                }
            }
        }
        Err(SimError::Stuck { pid })
    }
}
