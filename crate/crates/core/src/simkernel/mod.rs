//! Deterministic single-threaded simulation of `n` processes over shared memory.
//!
//! Processes are step machines (see [`SimObject`]); the kernel executes one
//! shared-memory instruction or local step per scheduling decision, injects
//! crashes between instructions, and charges RMRs under the CC or DSM model.

mod event;
mod machine;
mod memory;
mod sched;
mod system;

pub use event::{Event, EventKind, History, HistoryIoError, LockId, MarkerKind, ObjId};
pub use machine::{
    cas, fas, lock_segment, read, write, Action, Ctx, Frame, Segment, SimObject, StepBounds, ENTER, EXIT, NREGS,
    RECOVER,
};
pub use memory::{
    Addr, Instr, Memory, Outcome, Pid, RmrKind, RmrModel, SharedWord, Word, WordId, LOCKED, MAX_PROCS, NIL, UNKNOWN,
};
pub use sched::{
    run, run_checked, Adversary, Directive, Limits, RandomConfig, RoundRobin, RunError, Scheduler, SchedulerSpec,
    SeededRandom,
};
pub use system::{Choice, ObjectTable, Pending, Proc, ProcStatus, System};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("process {pid} accessed freed or reissued word {word:?}")]
    PoisonAccess { pid: Pid, word: WordId },
    #[error("unknown word {word:?}")]
    UnknownWord { word: WordId },
    #[error("process {pid} crashed while already crashed")]
    DoubleCrash { pid: Pid },
    #[error("process {pid} restarted without a crash")]
    RestartWithoutCrash { pid: Pid },
    #[error("process {pid} is not runnable")]
    NotRunnable { pid: Pid },
    #[error("process {pid} made no progress towards an instruction")]
    Stuck { pid: Pid },
    #[error("home {home} out of range")]
    InvalidHome { home: Pid },
}
