use std::fmt::Debug;

use super::event::{MarkerKind, ObjId};
use super::memory::{Addr, Instr, Pid, Word, WordId};

pub const NREGS: usize = 8;

/// Lock segments. Calls into a lock's segment routine make the kernel emit the
/// segment markers, so lock code never emits them by hand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Recover,
    Enter,
    Exit,
}

/// Routine numbers shared by every lock object.
pub const RECOVER: u8 = 0;
pub const ENTER: u8 = 1;
pub const EXIT: u8 = 2;

pub fn lock_segment(routine: u8) -> Option<Segment> {
    match routine {
        RECOVER => Some(Segment::Recover),
        ENTER => Some(Segment::Enter),
        EXIT => Some(Segment::Exit),
        _ => None,
    }
}

/// One activation record of a routine. Everything here is private (volatile)
/// state and is wiped by a crash.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Frame {
    pub obj: ObjId,
    pub routine: u8,
    pub pc: u16,
    /// Result of the last instruction or of the last returning call.
    pub acc: Word,
    pub regs: [Word; NREGS],
}

impl Frame {
    pub fn new(obj: ObjId, routine: u8, args: [Word; 3]) -> Self {
        let mut regs = [0; NREGS];
        regs[..3].copy_from_slice(&args);
        Frame { obj, routine, pc: 0, acc: 0, regs }
    }

    /// Jump helper: sets pc and returns the given action.
    pub fn go(&mut self, pc: u16, a: Action) -> Action {
        self.pc = pc;
        a
    }
}

/// What a routine asks the kernel to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    /// One shared-memory instruction; consumes a scheduled step.
    Mem(Instr, Addr),
    /// One bounded local computation step; consumes a scheduled step.
    Local,
    Call { obj: ObjId, routine: u8, args: [Word; 3] },
    Ret(Word),
    /// A marker attributed to the calling frame's object.
    Mark(MarkerKind),
    /// A marker attributed to another object (e.g. NcsBegin of the program's lock).
    MarkFor(MarkerKind, ObjId),
    /// End of this lock's doorway (propagated to enclosing locks that delegate their doorway).
    Doorway,
    /// Allocate a fresh two-word node homed at the caller; acc receives its encoded address.
    AllocNode { init: [Word; 2] },
    /// Re-issue a pooled node; acc receives the new encoded address.
    RenewNode { base: WordId, init: [Word; 2] },
    /// Poison a pooled node until it is renewed.
    FreeNode { base: WordId },
    /// The current application request is complete (persistent bookkeeping).
    CompleteRequest,
    Park,
}

pub fn read(a: Addr) -> Action {
    Action::Mem(Instr::Read, a)
}

pub fn write(a: Addr, v: Word) -> Action {
    Action::Mem(Instr::Write(v), a)
}

pub fn cas(a: Addr, old: Word, new: Word) -> Action {
    Action::Mem(Instr::Cas { old, new }, a)
}

pub fn fas(a: Addr, v: Word) -> Action {
    Action::Mem(Instr::Fas(v), a)
}

/// Read-only context handed to a step function.
#[derive(Clone, Copy, Debug)]
pub struct Ctx {
    pub pid: Pid,
    pub n: usize,
    /// Requests left for this process (persistent application state).
    pub requests_remaining: u32,
}

/// Declared worst-case own-step bounds used for the BR, BE and BCSR checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub struct StepBounds {
    pub recover: u32,
    pub exit: u32,
    /// Steps from RecoverBegin to CsBegin in the passage after a crash inside the CS.
    pub reenter: u32,
}

/// A simulated object expressed as a resumable step machine.
///
/// `step` must be a deterministic function of the frame contents and must
/// return after a bounded amount of host work.
pub trait SimObject: Debug + Send + Sync {
    fn name(&self) -> String;

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action;

    /// Which lock segment a routine implements, if any.
    fn segment(&self, _routine: u8) -> Option<Segment> {
        None
    }

    /// Whether a crash at this frame's current position is unsafe for this lock.
    fn sensitive(&self, _f: &Frame) -> bool {
        false
    }

    /// A lock whose doorway is exactly the doorway of one of its component locks.
    fn doorway_delegate(&self) -> Option<ObjId> {
        None
    }
}
