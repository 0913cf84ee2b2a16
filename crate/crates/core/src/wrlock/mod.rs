//! The weakly recoverable MCS-style queue lock.
//!
//! Each attempt appends a fresh two-word node `[locked, next]` to the queue
//! with a FAS on `tail` and persists the returned predecessor. A crash between
//! those two instructions loses the predecessor: the attempt is abandoned and
//! its node relieved during recovery, which may let two processes into the
//! critical section until the consequences of that failure have passed.

mod chain;

use crate::reclaim;
use crate::simkernel::{
    cas, fas, lock_segment, read, write, Action, Addr, Ctx, Frame, Memory, ObjId, Segment, SimError, SimObject,
    StepBounds, Word, WordId, LOCKED, NIL, UNKNOWN,
};

pub use chain::{ChainMonitor, ChainViolation};

/// Values of the per-process `state` word.
pub mod state {
    use crate::simkernel::Word;
    pub const FREE: Word = 0;
    pub const TRYING: Word = 1;
    pub const IN_CS: Word = 2;
    pub const EXITING: Word = 3;
    pub const RETIRING: Word = 4;
    pub const ABANDONING: Word = 5;
    pub const RETIRING_USELESS: Word = 6;
}

/// Node field offsets.
pub const LOCKED_FIELD: u32 = 0;
pub const NEXT_FIELD: u32 = 1;

/// Where queue nodes come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alloc {
    /// A brand-new node per attempt; space grows without bound.
    Fresh,
    /// Bounded pools managed by a reclamation object.
    Pool(ObjId),
}

#[derive(Clone, Debug)]
pub struct WrLock {
    pub tail: WordId,
    pub state: Vec<WordId>,
    pub mine: Vec<WordId>,
    pub pred: Vec<WordId>,
    pub alloc: Alloc,
}

// Program counters. Enter starts at 1, Exit at 100, Recover at 200.
const E_PENALTY: u16 = 2;
const E_DISPATCH: u16 = 3;
const E_ALLOC: u16 = 10;
const E_PERSIST: u16 = 16;
const E_DOORWAY: u16 = 17;
const E_STRIDE: u16 = 18;
const E_RESUME: u16 = 20;
const E_WAIT: u16 = 30;
const E_CS: u16 = 40;
const X_START: u16 = 100;
const R_START: u16 = 200;
const RELIEVE: u16 = 300;
const RETIRE: u16 = 400;
const RETIRE_USELESS: u16 = 410;

/// Register holding the current node address.
const NODE: usize = 3;
/// Register holding the predecessor address.
const PREV: usize = 4;
const SAVED: usize = 5;
/// Continuation pc after the relieve block.
const CONT: usize = 6;

impl WrLock {
    /// Allocates the lock's shared words: `tail` homed at process 1, and
    /// `state`, `mine`, `pred` homed at their owners.
    pub fn new(mem: &mut Memory, alloc: Alloc) -> Result<Self, SimError> {
        let n = mem.n();
        let tail = mem.alloc_word(1, NIL)?;
        let mut state = Vec::with_capacity(n);
        let mut mine = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        for p in 1..=n {
            state.push(mem.alloc_word(p, state::FREE)?);
            mine.push(mem.alloc_word(p, NIL)?);
            pred.push(mem.alloc_word(p, NIL)?);
        }
        Ok(WrLock { tail, state, mine, pred, alloc })
    }

    fn st(&self, pid: usize) -> Addr {
        Addr::plain(self.state[pid - 1])
    }

    fn mine_of(&self, pid: usize) -> Addr {
        Addr::plain(self.mine[pid - 1])
    }

    fn pred_of(&self, pid: usize) -> Addr {
        Addr::plain(self.pred[pid - 1])
    }

    fn pool(&self) -> Option<ObjId> {
        match self.alloc {
            Alloc::Fresh => None,
            Alloc::Pool(o) => Some(o),
        }
    }

    /// Step bounds of the lock itself; `retire` is the bound of one retire
    /// call of the allocator (0 for fresh allocation).
    pub fn bounds_with(retire: u32) -> StepBounds {
        StepBounds {
            // state, pred, ABANDONING, mine, relieve (3), RETIRING_USELESS, retire, FREE
            recover: 9 + retire,
            // EXITING, mine, relieve (3), RETIRING, retire, FREE
            exit: 7 + retire,
            // Recover reads state, Enter reads state.
            reenter: 2,
        }
    }

    pub fn bounds(&self) -> StepBounds {
        Self::bounds_with(0)
    }
}

fn call(obj: ObjId, routine: u8, arg: Word) -> Action {
    Action::Call { obj, routine, args: [arg, 0, 0] }
}

impl SimObject for WrLock {
    fn name(&self) -> String {
        match self.alloc {
            Alloc::Fresh => "wr-lock".into(),
            Alloc::Pool(_) => "wr-lock-mr".into(),
        }
    }

    fn segment(&self, routine: u8) -> Option<Segment> {
        lock_segment(routine)
    }

    fn sensitive(&self, f: &Frame) -> bool {
        f.routine == crate::simkernel::ENTER && f.pc == E_PERSIST
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let p = ctx.pid;
        if f.pc == 0 {
            f.pc = match lock_segment(f.routine) {
                Some(Segment::Enter) => 1,
                Some(Segment::Exit) => X_START,
                Some(Segment::Recover) => R_START,
                None => unreachable!("wr-lock routine {}", f.routine),
            };
        }
        loop {
            let node = Addr::decode(f.regs[NODE]);
            match f.pc {
                // ---- Enter ----
                1 => return f.go(E_PENALTY, read(self.st(p))),
                E_PENALTY => {
                    if f.acc == state::IN_CS {
                        return Action::Ret(0);
                    }
                    f.regs[SAVED] = f.acc;
                    f.pc = E_DISPATCH;
                    if let Some(pool) = self.pool() {
                        return call(pool, reclaim::PENALTY, 0);
                    }
                }
                E_DISPATCH => match f.regs[SAVED] {
                    state::FREE => f.pc = E_ALLOC,
                    state::TRYING => return f.go(E_RESUME, read(self.mine_of(p))),
                    s => panic!("wr-lock enter by p{p} in state {s}; recover must run first"),
                },
                E_ALLOC => {
                    return match self.pool() {
                        Some(pool) => f.go(11, call(pool, reclaim::GET, 0)),
                        None => f.go(11, Action::AllocNode { init: [1, NIL] }),
                    }
                }
                11 => {
                    f.regs[NODE] = f.acc;
                    return f.go(12, write(self.mine_of(p), f.acc));
                }
                12 => return f.go(13, write(self.pred_of(p), UNKNOWN)),
                13 => return f.go(14, write(self.st(p), state::TRYING)),
                14 => return f.go(15, fas(Addr::plain(self.tail), f.regs[NODE])),
                15 => {
                    f.regs[PREV] = f.acc;
                    return f.go(E_PERSIST, write(self.pred_of(p), f.acc));
                }
                E_PERSIST => {
                    f.pc = E_DOORWAY;
                    if let Some(pool) = self.pool() {
                        return call(pool, reclaim::CHECKPOINT, 0);
                    }
                }
                E_DOORWAY => return f.go(E_STRIDE, Action::Doorway),
                E_STRIDE => {
                    f.pc = E_WAIT;
                    if let Some(pool) = self.pool() {
                        return call(pool, reclaim::REGULAR, 0);
                    }
                }
                E_RESUME => {
                    f.regs[NODE] = f.acc;
                    return f.go(21, read(self.pred_of(p)));
                }
                21 => {
                    f.regs[PREV] = f.acc;
                    f.pc = E_PERSIST;
                }
                E_WAIT => {
                    if f.regs[PREV] == NIL {
                        f.pc = E_CS;
                    } else {
                        let prev_next = Addr::decode(f.regs[PREV]).field(NEXT_FIELD);
                        return f.go(31, cas(prev_next, NIL, f.regs[NODE]));
                    }
                }
                31 => {
                    if f.acc == 1 {
                        f.pc = 33;
                    } else if f.regs[SAVED] == state::FREE {
                        // Only the predecessor's relieve can have filled the link.
                        f.pc = E_CS;
                    } else {
                        return f.go(32, read(Addr::decode(f.regs[PREV]).field(NEXT_FIELD)));
                    }
                }
                32 => match f.acc {
                    LOCKED => f.pc = E_CS,
                    v if v == f.regs[NODE] => f.pc = 33,
                    v => panic!("p{p}: predecessor next holds foreign value {v:#x}"),
                },
                33 => return f.go(34, read(node.field(LOCKED_FIELD))),
                34 => {
                    if f.acc != 0 {
                        return read(node.field(LOCKED_FIELD));
                    }
                    f.pc = E_CS;
                }
                E_CS => return f.go(41, write(self.st(p), state::IN_CS)),
                41 => return Action::Ret(0),

                // ---- Exit ----
                X_START => return f.go(101, write(self.st(p), state::EXITING)),
                101 => return f.go(102, read(self.mine_of(p))),
                102 => {
                    f.regs[NODE] = f.acc;
                    f.regs[CONT] = RETIRE as Word;
                    f.pc = RELIEVE;
                }

                // ---- Recover ----
                R_START => return f.go(201, read(self.st(p))),
                201 => match f.acc {
                    state::FREE | state::IN_CS => return Action::Ret(0),
                    state::TRYING => return f.go(202, read(self.pred_of(p))),
                    state::ABANDONING => return f.go(204, read(self.mine_of(p))),
                    state::EXITING => return f.go(205, read(self.mine_of(p))),
                    state::RETIRING => f.pc = RETIRE + 1,
                    state::RETIRING_USELESS => f.pc = RETIRE_USELESS + 1,
                    s => panic!("p{p}: corrupt wr-lock state {s}"),
                },
                202 => {
                    if f.acc != UNKNOWN {
                        return Action::Ret(0);
                    }
                    return f.go(203, write(self.st(p), state::ABANDONING));
                }
                203 => return f.go(204, read(self.mine_of(p))),
                204 => {
                    f.regs[NODE] = f.acc;
                    f.regs[CONT] = RETIRE_USELESS as Word;
                    f.pc = RELIEVE;
                }
                205 => {
                    f.regs[NODE] = f.acc;
                    f.regs[CONT] = RETIRE as Word;
                    f.pc = RELIEVE;
                }

                // ---- relieve the node in regs[NODE], then jump to regs[CONT] ----
                RELIEVE => return f.go(RELIEVE + 1, cas(node.field(NEXT_FIELD), NIL, LOCKED)),
                301 => {
                    if f.acc == 1 {
                        f.pc = RELIEVE + 3;
                    } else {
                        return f.go(RELIEVE + 2, read(node.field(NEXT_FIELD)));
                    }
                }
                302 => {
                    if f.acc == LOCKED {
                        f.pc = RELIEVE + 3;
                    } else {
                        let succ = Addr::decode(f.acc).field(LOCKED_FIELD);
                        return f.go(f.regs[CONT] as u16, write(succ, 0));
                    }
                }
                // No successor: take the node out of `tail` so later attempts never see it.
                303 => return f.go(f.regs[CONT] as u16, cas(Addr::plain(self.tail), f.regs[NODE], NIL)),

                // ---- retire ----
                RETIRE => return f.go(RETIRE + 1, write(self.st(p), state::RETIRING)),
                401 => {
                    f.pc = RETIRE + 2;
                    if let Some(pool) = self.pool() {
                        return call(pool, reclaim::RETIRE, 0);
                    }
                }
                402 => return f.go(RETIRE + 3, write(self.st(p), state::FREE)),
                403 => return Action::Ret(0),
                RETIRE_USELESS => return f.go(RETIRE_USELESS + 1, write(self.st(p), state::RETIRING_USELESS)),
                411 => {
                    f.pc = RETIRE_USELESS + 2;
                    if let Some(pool) = self.pool() {
                        return call(pool, reclaim::RETIRE, 1);
                    }
                }
                412 => return f.go(RETIRE + 3, write(self.st(p), state::FREE)),
                pc => unreachable!("wr-lock pc {pc}"),
            }
        }
    }
}
