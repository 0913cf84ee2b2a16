use crate::simkernel::{
    read, write, Action, Addr, Ctx, Frame, MarkerKind, Memory, Pid, Segment, SimError, SimObject, StepBounds, Word,
    WordId, lock_segment,
};

pub const LEFT: Word = 0;
pub const RIGHT: Word = 1;
/// Non-segment routine: returns the caller's side phase word.
pub const PHASE: u8 = 5;
/// Non-segment routine: completes the caller's interrupted release, if any.
pub const FINISH: u8 = 6;

/// Phase codes, stored as `pid << 3 | code`.
pub mod phase {
    use crate::simkernel::{Pid, Word};
    pub const FREE: Word = 0;
    pub const ACQUIRING: Word = 1;
    pub const IN_CS: Word = 2;
    pub const RELEASING: Word = 3;

    pub fn of(pid: Pid, code: Word) -> Word {
        ((pid as Word) << 3) | code
    }

    pub fn pid(w: Word) -> Pid {
        (w >> 3) as Pid
    }

    pub fn code(w: Word) -> Word {
        w & 7
    }
}

/// Two-port recoverable lock: at most one process per side at a time.
///
/// Peterson-style `owner`/`turn` words decide who goes first; a waiter spins
/// on its own `go` word and is woken by the other side whenever the decision
/// may have changed. A per-side phase word makes every segment resumable.
#[derive(Clone, Debug)]
pub struct Arbitrator {
    pub owner: [WordId; 2],
    pub turn: WordId,
    pub phase: [WordId; 2],
    /// Indexed by pid - 1; homed at the process.
    pub go: Vec<WordId>,
    pub label: String,
}

impl Arbitrator {
    pub fn new(mem: &mut Memory, label: impl Into<String>) -> Result<Self, SimError> {
        let n = mem.n();
        let owner = [mem.alloc_word(1, 0)?, mem.alloc_word(1, 0)?];
        let turn = mem.alloc_word(1, 0)?;
        let phase = [mem.alloc_word(1, 0)?, mem.alloc_word(1, 0)?];
        let go = (1..=n).map(|p| mem.alloc_word(p, 0)).collect::<Result<_, _>>()?;
        Ok(Arbitrator { owner, turn, phase, go, label: label.into() })
    }

    pub fn bounds() -> StepBounds {
        StepBounds { recover: 5, exit: 5, reenter: 2 }
    }
}

const X_START: u16 = 100;
const R_START: u16 = 200;

impl SimObject for Arbitrator {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn segment(&self, routine: u8) -> Option<Segment> {
        lock_segment(routine)
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let p = ctx.pid;
        let s = f.regs[0] as usize;
        let o = 1 - s;
        let ph = Addr::plain(self.phase[s]);
        let me = |code| phase::of(p, code);
        let go_of = |q: Word| Addr::plain(self.go[q as usize - 1]);
        if f.pc == 0 {
            f.pc = match lock_segment(f.routine) {
                Some(Segment::Enter) => 1,
                Some(Segment::Exit) => X_START,
                Some(Segment::Recover) => R_START,
                None if f.routine == PHASE => 300,
                None if f.routine == FINISH => 310,
                None => unreachable!("arbitrator routine {}", f.routine),
            };
        }
        loop {
            match f.pc {
                1 => return f.go(2, read(ph)),
                2 => {
                    if f.acc == me(phase::IN_CS) {
                        return Action::Ret(0);
                    }
                    if phase::code(f.acc) != phase::FREE && phase::pid(f.acc) != p {
                        f.pc = 3;
                        return Action::Mark(MarkerKind::PortViolation);
                    }
                    f.pc = 3;
                }
                3 => return f.go(4, write(ph, me(phase::ACQUIRING))),
                4 => return f.go(5, write(go_of(p as Word), 0)),
                5 => return f.go(6, write(Addr::plain(self.owner[s]), p as Word)),
                6 => return f.go(7, write(Addr::plain(self.turn), s as Word)),
                7 => return f.go(8, read(Addr::plain(self.owner[o]))),
                8 => {
                    if f.acc != 0 {
                        return f.go(9, write(go_of(f.acc), 1));
                    }
                    f.pc = 9;
                }
                9 => return f.go(10, Action::Doorway),
                10 => return f.go(11, read(Addr::plain(self.owner[o]))),
                11 => {
                    if f.acc == 0 {
                        f.pc = 20;
                    } else {
                        return f.go(12, read(Addr::plain(self.turn)));
                    }
                }
                12 => {
                    if f.acc != s as Word {
                        f.pc = 20;
                    } else {
                        return f.go(13, read(go_of(p as Word)));
                    }
                }
                13 => {
                    if f.acc == 0 {
                        return read(go_of(p as Word));
                    }
                    return f.go(10, write(go_of(p as Word), 0));
                }
                20 => return f.go(21, write(ph, me(phase::IN_CS))),
                21 => return Action::Ret(0),

                X_START => return f.go(101, write(ph, me(phase::RELEASING))),
                101 => return f.go(102, write(Addr::plain(self.owner[s]), 0)),
                102 => return f.go(103, read(Addr::plain(self.owner[o]))),
                103 => {
                    if f.acc != 0 {
                        return f.go(104, write(go_of(f.acc), 1));
                    }
                    f.pc = 104;
                }
                104 => return f.go(105, write(ph, phase::FREE)),
                105 => return Action::Ret(0),

                R_START => return f.go(201, read(ph)),
                201 => {
                    if f.acc == me(phase::RELEASING) {
                        f.pc = 101;
                    } else {
                        return Action::Ret(0);
                    }
                }

                300 => return f.go(301, read(ph)),
                301 => return Action::Ret(f.acc),
                310 => return f.go(311, read(ph)),
                311 => {
                    if f.acc == me(phase::RELEASING) {
                        f.pc = 101;
                    } else {
                        return Action::Ret(0);
                    }
                }
                pc => unreachable!("arbitrator pc {pc}"),
            }
        }
    }
}

pub fn side_name(side: Word) -> &'static str {
    if side == LEFT {
        "left"
    } else {
        "right"
    }
}

/// Which process currently claims each side, from the phase words.
pub fn claimants(mem: &Memory, arb: &Arbitrator) -> [Option<Pid>; 2] {
    [0, 1].map(|s| {
        let w = mem.peek(arb.phase[s]);
        (phase::code(w) != phase::FREE).then(|| phase::pid(w))
    })
}
