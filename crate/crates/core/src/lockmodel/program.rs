use crate::simkernel::{Action, Ctx, Frame, MarkerKind, ObjId, SimObject, Word, ENTER, EXIT, RECOVER};

/// The per-process execution loop: NCS, Recover, Enter, CS, Exit, repeated
/// until the process's requests are used up. A crash restarts it at the NCS.
#[derive(Debug, Clone)]
pub struct ExecLoop {
    pub lock: ObjId,
    /// Local steps spent inside each CS (at least one, so crashes can land in the CS).
    pub cs_steps: u16,
    /// First argument passed to every lock call, indexed by pid - 1 (the
    /// arbitrator reads its side from it). Missing entries mean 0.
    pub arg: Vec<Word>,
}

impl ExecLoop {
    pub fn new(lock: ObjId) -> Self {
        ExecLoop { lock, cs_steps: 1, arg: Vec::new() }
    }
}

impl SimObject for ExecLoop {
    fn name(&self) -> String {
        "exec-loop".into()
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let arg = self.arg.get(ctx.pid - 1).copied().unwrap_or(0);
        let call = |routine| Action::Call { obj: self.lock, routine, args: [arg, 0, 0] };
        match f.pc {
            0 => f.go(1, Action::MarkFor(MarkerKind::NcsBegin, self.lock)),
            1 if ctx.requests_remaining == 0 => Action::Park,
            1 => f.go(2, Action::Local),
            2 => f.go(3, call(RECOVER)),
            3 => {
                f.regs[0] = 0;
                f.go(4, call(ENTER))
            }
            4 if (f.regs[0] as u16) < self.cs_steps.max(1) => {
                f.regs[0] += 1;
                Action::Local
            }
            4 => f.go(5, call(EXIT)),
            5 => f.go(0, Action::CompleteRequest),
            _ => unreachable!("exec loop pc {}", f.pc),
        }
    }
}
