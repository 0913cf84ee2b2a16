use crate::simkernel::{
    lock_segment, read, write, Action, Addr, Ctx, Frame, ObjId, Segment, SimObject, StepBounds, Word, ENTER, EXIT,
    NIL, RECOVER,
};

use super::arbitrator::{LEFT, RIGHT};
use super::splitter::{path, Splitter, NAVIGATE};

/// One level of the adaptive construction: a weakly recoverable filter lock,
/// then a splitter that sends at most one process straight to the left port
/// of an arbitrator while everyone else goes through the core lock and the
/// right port.
#[derive(Clone, Debug)]
pub struct SemiAdaptive {
    pub level: u32,
    pub filter: ObjId,
    pub splitter_obj: ObjId,
    pub splitter: Splitter,
    pub core: ObjId,
    pub arb: ObjId,
}

impl SemiAdaptive {
    /// Step bounds given those of the components.
    pub fn bounds(filter: StepBounds, core: StepBounds, arb: StepBounds) -> StepBounds {
        StepBounds {
            recover: 0,
            // type, arbitrator exit, core exit, type/x writes, filter exit
            exit: 1 + arb.exit + core.exit.max(1) + 1 + filter.exit,
            // filter reentry, type read, then core reentry (slow path) and arbitrator reentry
            reenter: filter.reenter + 1 + core.reenter + arb.reenter,
        }
    }
}

fn call(obj: ObjId, routine: u8, arg: Word) -> Action {
    Action::Call { obj, routine, args: [arg, 0, 0] }
}

impl SimObject for SemiAdaptive {
    fn name(&self) -> String {
        format!("semi-adaptive[{}]", self.level)
    }

    fn segment(&self, routine: u8) -> Option<Segment> {
        lock_segment(routine)
    }

    fn doorway_delegate(&self) -> Option<ObjId> {
        Some(self.filter)
    }

    fn step(&self, ctx: &Ctx, f: &mut Frame) -> Action {
        let p = ctx.pid;
        match (f.routine, f.pc) {
            (RECOVER, 0) => Action::Ret(0),

            (ENTER, 0) => f.go(1, call(self.filter, RECOVER, 0)),
            (ENTER, 1) => f.go(2, call(self.filter, ENTER, 0)),
            (ENTER, 2) => f.go(3, call(self.splitter_obj, NAVIGATE, 0)),
            (ENTER, 3) if f.acc == path::FAST => f.go(4, call(self.arb, RECOVER, LEFT)),
            (ENTER, 3) => f.go(6, call(self.core, RECOVER, 0)),
            (ENTER, 4) => f.go(9, call(self.arb, ENTER, LEFT)),
            (ENTER, 6) => f.go(7, call(self.core, ENTER, 0)),
            (ENTER, 7) => f.go(8, call(self.arb, RECOVER, RIGHT)),
            (ENTER, 8) => f.go(9, call(self.arb, ENTER, RIGHT)),
            (ENTER, 9) => Action::Ret(0),

            (EXIT, 0) => f.go(1, read(self.splitter.ty_of(p))),
            (EXIT, 1) => {
                f.regs[3] = f.acc;
                let side = match f.acc {
                    path::FAST => LEFT,
                    path::SLOW => RIGHT,
                    t => panic!("p{p} exits level {} with path {t}", self.level),
                };
                f.go(2, call(self.arb, EXIT, side))
            }
            (EXIT, 2) if f.regs[3] == path::FAST => f.go(3, write(self.splitter.ty_of(p), path::NONE)),
            (EXIT, 2) => f.go(5, call(self.core, EXIT, 0)),
            (EXIT, 3) => f.go(6, write(Addr::plain(self.splitter.x), NIL)),
            (EXIT, 5) => f.go(6, write(self.splitter.ty_of(p), path::NONE)),
            (EXIT, 6) => f.go(7, call(self.filter, EXIT, 0)),
            (EXIT, 7) => Action::Ret(0),
            (r, pc) => unreachable!("semi-adaptive routine {r} pc {pc}"),
        }
    }
}
