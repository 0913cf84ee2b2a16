//! Bounded-space node allocation for the queue lock.
//!
//! Every process owns two pools of `3n + 2` nodes. An attempt takes the node
//! indexed by the process's stride counter from the active pool. Between two
//! attempts the process executes at least one stride of an incremental
//! grace-period detection routine (snapshot, catch-up, yield, switch); when
//! the routine completes, the backup pool is reclaimed and the roles swap.
//!
//! The stride counter is monotone: the position inside the routine is
//! `ctr % (3n + 2)` and the active pool is `(ctr / (3n + 2)) % 2`.

use serde::{Deserialize, Serialize};

use crate::broadcast::{self, BroadcastCc, BroadcastDsm, BroadcastKind};
use crate::simkernel::{
    read, write, Action, Addr, Ctx, Frame, Memory, ObjId, ObjectTable, Pid, SimError, SimObject, Word, WordId, NIL,
};

pub const PENALTY: u8 = 20;
pub const GET: u8 = 21;
pub const CHECKPOINT: u8 = 22;
pub const REGULAR: u8 = 23;
pub const RETIRE: u8 = 24;

/// Per-process shared words, all homed at the process.
#[derive(Clone, Debug)]
pub struct ProcWords {
    pub start: WordId,
    pub ctr: WordId,
    pub recorded: WordId,
    pub penalty: WordId,
    pub penalty_stride: WordId,
    /// `snap[j - 1]`: recorded start counter of process `j`.
    pub snap: Vec<WordId>,
    /// `pools[parity][slot]`: base word of a two-word node.
    pub pools: [Vec<WordId>; 2],
}

#[derive(Clone, Debug)]
pub struct Reclaim {
    pub n: usize,
    pub procs: Vec<ProcWords>,
    pub checkpoint: Vec<ObjId>,
    pub finish: Vec<ObjId>,
    /// Word holding the completed value of each checkpoint object.
    pub checkpoint_val: Vec<WordId>,
    pub finish_val: Vec<WordId>,
    pub kind: BroadcastKind,
}

/// Snapshot of one process's counters (completed broadcast values).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub start: Word,
    pub checkpoint: Word,
    pub finish: Word,
    pub stride: Word,
}

const CTR: usize = 3;
const SAVED: usize = 5;
const SAVED2: usize = 6;
const CONT: usize = 7;
const STRIDE: u16 = 100;

impl Reclaim {
    pub fn pool_size(n: usize) -> usize {
        3 * n + 2
    }

    /// Allocates all words and the `2n` broadcast objects and registers the latter.
    pub fn build(table: &mut ObjectTable, mem: &mut Memory, kind: BroadcastKind) -> Result<Reclaim, SimError> {
        let n = mem.n();
        let size = Self::pool_size(n);
        let mut procs = Vec::with_capacity(n);
        for p in 1..=n {
            let mut pools: [Vec<WordId>; 2] = [Vec::with_capacity(size), Vec::with_capacity(size)];
            for pool in pools.iter_mut() {
                for _ in 0..size {
                    pool.push(mem.alloc_node(p, &[1, NIL])?.id);
                }
            }
            procs.push(ProcWords {
                start: mem.alloc_word(p, 0)?,
                ctr: mem.alloc_word(p, 0)?,
                recorded: mem.alloc_word(p, 0)?,
                penalty: mem.alloc_word(p, 0)?,
                penalty_stride: mem.alloc_word(p, 0)?,
                snap: (0..n).map(|_| mem.alloc_word(p, 0)).collect::<Result<_, _>>()?,
                pools,
            });
        }
        let mut checkpoint = Vec::new();
        let mut finish = Vec::new();
        let mut checkpoint_val = Vec::new();
        let mut finish_val = Vec::new();
        for p in 1..=n {
            for (objs, vals) in [(&mut checkpoint, &mut checkpoint_val), (&mut finish, &mut finish_val)] {
                match kind {
                    BroadcastKind::Cc => {
                        let b = BroadcastCc::new(mem, p)?;
                        vals.push(b.count);
                        objs.push(table.add(Box::new(b)));
                    }
                    BroadcastKind::Dsm => {
                        let b = BroadcastDsm::new(mem, p)?;
                        vals.push(b.b);
                        objs.push(table.add(Box::new(b)));
                    }
                }
            }
        }
        Ok(Reclaim { n, procs, checkpoint, finish, checkpoint_val, finish_val, kind })
    }

    pub fn counters(&self, mem: &Memory, pid: Pid) -> Counters {
        Counters {
            start: mem.peek(self.procs[pid - 1].start),
            checkpoint: mem.peek(self.checkpoint_val[pid - 1]),
            finish: mem.peek(self.finish_val[pid - 1]),
            stride: mem.peek(self.procs[pid - 1].ctr),
        }
    }

    /// `start - 1 <= finish <= checkpoint <= start` for every process.
    pub fn check_counters(&self, mem: &Memory) -> Result<(), String> {
        for pid in 1..=self.n {
            let c = self.counters(mem, pid);
            if !(c.start <= c.finish + 1 && c.finish <= c.checkpoint && c.checkpoint <= c.start) {
                return Err(format!("p{pid} counters out of order: {c:?}"));
            }
        }
        Ok(())
    }

    /// Pool nodes currently handed out or available (not poisoned).
    pub fn live_nodes(&self, mem: &Memory) -> usize {
        self.procs
            .iter()
            .flat_map(|w| w.pools.iter().flatten())
            .filter(|&&id| mem.word(id).map(|c| !c.freed).unwrap_or(false))
            .count()
    }

    /// Worst-case own steps of one `Set` on a counter object.
    pub fn set_bound(kind: BroadcastKind, n: usize) -> u32 {
        match kind {
            BroadcastKind::Cc => 2,
            // B, A, one announce read per other process, two extra steps and
            // a possible repair CAS per chained waiter, then wakeup, CAS, B.
            BroadcastKind::Dsm => 2 + 4 * (n as u32 - 1) + 3,
        }
    }

    /// Worst-case own steps of the retire routine.
    pub fn retire_bound(kind: BroadcastKind, n: usize) -> u32 {
        // ctr, penalty stride, penalty flag, start, two reads, two sets.
        3 + 1 + 2 + 2 * Self::set_bound(kind, n)
    }

    fn w(&self, pid: Pid) -> &ProcWords {
        &self.procs[pid - 1]
    }

    fn call(obj: ObjId, routine: u8, arg: Word) -> Action {
        Action::Call { obj, routine, args: [arg, 0, 0] }
    }

    /// One stride at counter value `f.regs[CTR]`; continues at `f.regs[CONT]`.
    fn stride(&self, p: Pid, f: &mut Frame) -> Option<Action> {
        let n = self.n;
        let size = Self::pool_size(n) as Word;
        let c = f.regs[CTR];
        let k = (c % size) as usize;
        let w = self.w(p);
        match f.pc {
            STRIDE => {
                if k < 3 * n {
                    let j = k % n + 1;
                    if j == p {
                        f.pc = STRIDE + 4;
                        return None;
                    }
                    if k < n {
                        return Some(f.go(STRIDE + 1, read(Addr::plain(self.w(j).start))));
                    }
                    return Some(f.go(STRIDE + 2, read(Addr::plain(w.snap[j - 1]))));
                }
                if k == 3 * n {
                    f.regs[SAVED2] = 0;
                    f.pc = STRIDE + 5;
                    return None;
                }
                f.pc = STRIDE + 4;
                None
            }
            // Snapshot phase: record start[j].
            101 => {
                let j = k % n + 1;
                Some(f.go(STRIDE + 4, write(Addr::plain(w.snap[j - 1]), f.acc)))
            }
            // Catch-up and yield phases: wait for checkpoint[j] / finish[j].
            102 => {
                let j = k % n + 1;
                if f.acc == 0 {
                    f.pc = STRIDE + 4;
                    return None;
                }
                let obj = if k < 2 * n { self.checkpoint[j - 1] } else { self.finish[j - 1] };
                Some(f.go(STRIDE + 4, Self::call(obj, broadcast::WAIT, f.acc)))
            }
            104 => Some(f.go(f.regs[CONT] as u16, write(Addr::plain(w.ctr), c + 1))),
            // Switch phase: reclaim every node of the backup pool.
            105 => {
                let backup = ((c / size + 1) % 2) as usize;
                let slot = f.regs[SAVED2] as usize;
                if slot == w.pools[backup].len() {
                    f.pc = STRIDE + 4;
                    return None;
                }
                f.regs[SAVED2] += 1;
                Some(Action::FreeNode { base: w.pools[backup][slot] })
            }
            pc => unreachable!("stride pc {pc}"),
        }
    }
}

impl SimObject for Reclaim {
    fn name(&self) -> String {
        "reclaim".into()
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let p = ctx.pid;
        let w = self.w(p);
        let size = Self::pool_size(self.n) as Word;
        loop {
            if f.pc >= STRIDE {
                if let Some(a) = self.stride(p, f) {
                    return a;
                }
                continue;
            }
            match (f.routine, f.pc) {
                (PENALTY, 0) => return f.go(1, read(Addr::plain(w.penalty))),
                (PENALTY, 1) if f.acc == 0 => return Action::Ret(0),
                (PENALTY, 1) => return f.go(2, read(Addr::plain(w.penalty_stride))),
                (PENALTY, 2) => {
                    f.regs[SAVED] = f.acc;
                    return f.go(3, read(Addr::plain(w.ctr)));
                }
                (PENALTY, 3) if f.acc != f.regs[SAVED] => return Action::Ret(0),
                (PENALTY, 3) => {
                    f.regs[CTR] = f.acc;
                    f.regs[CONT] = 4;
                    f.pc = STRIDE;
                }
                (PENALTY, 4) => return f.go(5, write(Addr::plain(w.penalty), 0)),
                (PENALTY, 5) => return Action::Ret(0),

                (GET, 0) => return f.go(1, read(Addr::plain(w.start))),
                (GET, 1) => {
                    f.regs[SAVED] = f.acc;
                    return f.go(2, Self::call(self.finish[p - 1], broadcast::READ, 0));
                }
                (GET, 2) => {
                    f.regs[SAVED2] = (f.acc == f.regs[SAVED]) as Word;
                    return f.go(3, read(Addr::plain(w.ctr)));
                }
                (GET, 3) => {
                    f.regs[CTR] = f.acc;
                    if f.regs[SAVED2] == 1 {
                        // Quiescent: begin a new attempt.
                        return f.go(4, write(Addr::plain(w.recorded), f.acc));
                    }
                    f.pc = 6;
                }
                (GET, 4) => return f.go(6, write(Addr::plain(w.start), f.regs[SAVED] + 1)),
                (GET, 6) => {
                    let c = f.regs[CTR];
                    let parity = ((c / size) % 2) as usize;
                    let base = w.pools[parity][(c % size) as usize];
                    return f.go(7, Action::RenewNode { base, init: [1, NIL] });
                }
                (GET, 7) => return Action::Ret(f.acc),

                (CHECKPOINT, 0) => return f.go(1, read(Addr::plain(w.start))),
                (CHECKPOINT, 1) => {
                    f.regs[SAVED] = f.acc;
                    return f.go(2, Self::call(self.checkpoint[p - 1], broadcast::READ, 0));
                }
                (CHECKPOINT, 2) if f.acc < f.regs[SAVED] => {
                    return f.go(3, Self::call(self.checkpoint[p - 1], broadcast::SET, f.regs[SAVED]))
                }
                (CHECKPOINT, 2) | (CHECKPOINT, 3) => return Action::Ret(0),

                (REGULAR, 0) => return f.go(1, read(Addr::plain(w.recorded))),
                (REGULAR, 1) => {
                    f.regs[SAVED] = f.acc;
                    return f.go(2, read(Addr::plain(w.ctr)));
                }
                (REGULAR, 2) if f.acc != f.regs[SAVED] => return Action::Ret(0),
                (REGULAR, 2) => {
                    f.regs[CTR] = f.acc;
                    f.regs[CONT] = 3;
                    f.pc = STRIDE;
                }
                (REGULAR, 3) => return Action::Ret(0),

                // regs[0] = 1 iff the attempt was useless.
                (RETIRE, 0) if f.regs[0] == 1 => return f.go(1, read(Addr::plain(w.ctr))),
                (RETIRE, 0) => f.pc = 3,
                (RETIRE, 1) => return f.go(2, write(Addr::plain(w.penalty_stride), f.acc)),
                (RETIRE, 2) => return f.go(3, write(Addr::plain(w.penalty), 1)),
                (RETIRE, 3) => return f.go(4, read(Addr::plain(w.start))),
                (RETIRE, 4) => {
                    f.regs[SAVED] = f.acc;
                    return f.go(5, Self::call(self.checkpoint[p - 1], broadcast::READ, 0));
                }
                (RETIRE, 5) if f.acc < f.regs[SAVED] => {
                    return f.go(6, Self::call(self.checkpoint[p - 1], broadcast::SET, f.regs[SAVED]))
                }
                (RETIRE, 5) => f.pc = 6,
                (RETIRE, 6) => return f.go(7, Self::call(self.finish[p - 1], broadcast::READ, 0)),
                (RETIRE, 7) if f.acc < f.regs[SAVED] => {
                    return f.go(8, Self::call(self.finish[p - 1], broadcast::SET, f.regs[SAVED]))
                }
                (RETIRE, 7) | (RETIRE, 8) => return Action::Ret(0),
                (r, pc) => unreachable!("reclaim routine {r} pc {pc}"),
            }
        }
    }
}
