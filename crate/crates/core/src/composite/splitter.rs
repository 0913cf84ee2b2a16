use crate::simkernel::{cas, read, write, Action, Addr, Ctx, Frame, Memory, SimError, SimObject, Word, WordId, NIL};

pub const NAVIGATE: u8 = 30;

pub mod path {
    use crate::simkernel::Word;
    pub const NONE: Word = 0;
    pub const FAST: Word = 1;
    pub const SLOW: Word = 2;
}

/// Test-and-set on `x`: the process that installs its id takes the fast path
/// until it resets `x` on exit. The chosen path is persisted in `ty[pid]` so
/// that a recovering process retakes it.
#[derive(Clone, Debug)]
pub struct Splitter {
    pub x: WordId,
    /// Indexed by pid - 1; homed at the process.
    pub ty: Vec<WordId>,
}

impl Splitter {
    pub fn new(mem: &mut Memory) -> Result<Self, SimError> {
        let x = mem.alloc_word(1, NIL)?;
        let ty = (1..=mem.n()).map(|p| mem.alloc_word(p, path::NONE)).collect::<Result<_, _>>()?;
        Ok(Splitter { x, ty })
    }

    pub fn ty_of(&self, pid: usize) -> Addr {
        Addr::plain(self.ty[pid - 1])
    }
}

impl SimObject for Splitter {
    fn name(&self) -> String {
        "splitter".into()
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let me = ctx.pid as Word;
        let x = Addr::plain(self.x);
        let ty = self.ty_of(ctx.pid);
        match f.pc {
            0 => f.go(1, read(ty)),
            1 if f.acc != path::NONE => Action::Ret(f.acc),
            1 => f.go(2, read(x)),
            2 if f.acc == me => f.go(4, write(ty, path::FAST)),
            2 => f.go(3, cas(x, NIL, me)),
            3 if f.acc == 1 => f.go(4, write(ty, path::FAST)),
            3 => f.go(5, write(ty, path::SLOW)),
            4 => Action::Ret(path::FAST),
            5 => Action::Ret(path::SLOW),
            pc => unreachable!("splitter pc {pc}"),
        }
    }
}
