use crate::simkernel::{
    lock_segment, read, write, Action, Addr, Ctx, Frame, ObjId, Pid, Segment, SimObject, StepBounds, Word, WordId,
    ENTER, EXIT, RECOVER,
};

use super::arbitrator::{phase, Arbitrator, FINISH, PHASE};

pub mod status {
    use crate::simkernel::Word;
    pub const FREE: Word = 0;
    pub const IN_CS: Word = 1;
    pub const EXITING: Word = 2;
}

/// Strongly recoverable `n`-process lock: a binary tree of arbitrators with
/// one leaf per process. A process climbs from its leaf to the root, acquiring
/// the arbitrator at every level from the side its subtree hangs on.
#[derive(Clone, Debug)]
pub struct Tournament {
    /// Heap-ordered internal nodes: node 1 is the root, children of `k` are `2k` and `2k+1`.
    pub nodes: Vec<ObjId>,
    pub height: u32,
    /// Indexed by pid - 1; homed at the process.
    pub status: Vec<WordId>,
}

impl Tournament {
    pub fn height_for(n: usize) -> u32 {
        (n.max(1) as u64).next_power_of_two().trailing_zeros()
    }

    /// Arbitrator object and side for `pid` at `level` (0 = just above the leaves).
    pub fn position(&self, pid: Pid, level: u32) -> (ObjId, Word) {
        let leaf = (1usize << self.height) + pid - 1;
        let node = leaf >> (level + 1);
        let side = ((leaf >> level) & 1) as Word;
        (self.nodes[node - 1], side)
    }

    pub fn bounds(height: u32) -> StepBounds {
        let a = Arbitrator::bounds();
        StepBounds {
            // status, then per level: phase read, recover, fast enter, exit; then status.
            recover: 2 + height * (a.recover + 1 + a.reenter + a.exit),
            exit: 2 + height * a.exit,
            // status reads, then a fast recover and enter per level.
            reenter: 2 + height * a.reenter,
        }
    }
}

const LEVEL: usize = 3;
const REENTRY: usize = 4;

impl SimObject for Tournament {
    fn name(&self) -> String {
        format!("tournament[h={}]", self.height)
    }

    fn segment(&self, routine: u8) -> Option<Segment> {
        lock_segment(routine)
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let p = ctx.pid;
        let st = Addr::plain(self.status[p - 1]);
        let h = self.height;
        let arb_call = |f: &Frame, routine: u8| {
            let (obj, side) = self.position(p, f.regs[LEVEL] as u32);
            Action::Call { obj, routine, args: [side, 0, 0] }
        };
        if f.pc == 0 {
            f.pc = match lock_segment(f.routine) {
                Some(Segment::Enter) => 1,
                Some(Segment::Exit) => 100,
                Some(Segment::Recover) => 200,
                None => unreachable!("tournament routine {}", f.routine),
            };
        }
        loop {
            match f.pc {
                // Enter: climb from the leaf.
                1 => return f.go(2, read(st)),
                2 => {
                    f.regs[LEVEL] = 0;
                    f.regs[REENTRY] = f.acc;
                    if f.acc == status::IN_CS {
                        // Re-acquire every arbitrator; each is still held, so this is fast.
                        f.pc = 3;
                    } else {
                        return f.go(3, Action::Doorway);
                    }
                }
                3 if f.regs[LEVEL] as u32 == h && f.regs[REENTRY] == status::IN_CS => return Action::Ret(0),
                3 if f.regs[LEVEL] as u32 == h => return f.go(6, write(st, status::IN_CS)),
                3 => {
                    let a = arb_call(f, RECOVER);
                    return f.go(4, a);
                }
                4 => {
                    let a = arb_call(f, ENTER);
                    return f.go(5, a);
                }
                5 => {
                    f.regs[LEVEL] += 1;
                    f.pc = 3;
                }
                6 => return Action::Ret(0),

                // Exit: release from the root down.
                100 => {
                    f.regs[LEVEL] = h as Word;
                    return f.go(101, write(st, status::EXITING));
                }
                101 if f.regs[LEVEL] == 0 => return f.go(103, write(st, status::FREE)),
                101 => {
                    f.regs[LEVEL] -= 1;
                    let a = arb_call(f, EXIT);
                    return f.go(101, a);
                }
                103 => return Action::Ret(0),

                // Recover: finish an interrupted release, skipping levels already released.
                200 => return f.go(201, read(st)),
                201 => {
                    if f.acc != status::EXITING {
                        return Action::Ret(0);
                    }
                    f.regs[LEVEL] = h as Word;
                    f.pc = 202;
                }
                202 if f.regs[LEVEL] == 0 => return f.go(103, write(st, status::FREE)),
                202 => {
                    f.regs[LEVEL] -= 1;
                    let a = arb_call(f, PHASE);
                    return f.go(203, a);
                }
                // A held arbitrator is released by a full passage; a half-released
                // one is finished without starting a new passage.
                203 if f.acc == phase::of(p, phase::IN_CS) => {
                    let a = arb_call(f, RECOVER);
                    return f.go(204, a);
                }
                203 if f.acc == phase::of(p, phase::RELEASING) => {
                    let a = arb_call(f, FINISH);
                    return f.go(202, a);
                }
                203 => f.pc = 202,
                204 => {
                    let a = arb_call(f, ENTER);
                    return f.go(205, a);
                }
                205 => {
                    let a = arb_call(f, EXIT);
                    return f.go(202, a);
                }
                pc => unreachable!("tournament pc {pc}"),
            }
        }
    }
}
