use super::*;
use crate::checker::{explore, BroadcastPathMonitor, ExploreConfig};
use crate::simkernel::{run, Limits, RandomConfig, SeededRandom};

fn explore_harness(kind: BroadcastKind, n: usize, owner: Pid, ops: u32, budget: u32) -> crate::checker::ExploreReport {
    let (sys, object) = harness(n, owner, ops, kind, RmrModel::dsm()).unwrap();
    let mon = BroadcastPathMonitor::new(BroadcastMonitor::new(object, n), owner);
    explore(&sys, mon, ExploreConfig { max_depth: 60, crash_budget: budget, ..Default::default() })
}

#[test]
fn exhaustive_dsm_three_processes_one_crash() {
    for owner in [1, 3] {
        let r = explore_harness(BroadcastKind::Dsm, 3, owner, 2, 1);
        assert!(r.violation.is_none(), "owner p{owner}: {:?}", r.violation);
        assert!(r.complete_paths > 0 && !r.truncated);
    }
}

#[test]
fn exhaustive_cc_three_processes_one_crash() {
    let r = explore_harness(BroadcastKind::Cc, 3, 2, 2, 1);
    assert!(r.violation.is_none(), "{:?}", r.violation);
}

/// Waits return at once; Sets only emit markers.
#[derive(Debug)]
struct Eager {
    word: WordId,
}

impl SimObject for Eager {
    fn name(&self) -> String {
        "eager".into()
    }

    fn step(&self, _ctx: &Ctx, f: &mut Frame) -> Action {
        let x = f.regs[0];
        match (f.routine, f.pc) {
            (SET, 0) => f.go(1, Action::Mark(MarkerKind::SetBegin(x))),
            (SET, 1) => f.go(2, Action::Mark(MarkerKind::SetEnd(x))),
            (WAIT, 0) => f.go(1, Action::Mark(MarkerKind::WaitBegin(x))),
            (WAIT, 1) => f.go(2, read(Addr::plain(self.word))),
            (WAIT, 2) => f.go(3, Action::Mark(MarkerKind::WaitEnd(x))),
            _ => Action::Ret(0),
        }
    }
}

/// Waits spin on a word that Set never writes.
#[derive(Debug)]
struct Silent {
    word: WordId,
}

impl SimObject for Silent {
    fn name(&self) -> String {
        "silent".into()
    }

    fn step(&self, _ctx: &Ctx, f: &mut Frame) -> Action {
        let x = f.regs[0];
        match (f.routine, f.pc) {
            (SET, 0) => f.go(1, Action::Mark(MarkerKind::SetBegin(x))),
            (SET, 1) => f.go(2, Action::Mark(MarkerKind::SetEnd(x))),
            (WAIT, 0) => f.go(1, Action::Mark(MarkerKind::WaitBegin(x))),
            (WAIT, 1) => f.go(2, read(Addr::plain(self.word))),
            (WAIT, 2) if f.acc < x => read(Addr::plain(self.word)),
            (WAIT, 2) => f.go(3, Action::Mark(MarkerKind::WaitEnd(x))),
            _ => Action::Ret(0),
        }
    }
}

fn broken(make: fn(WordId) -> Box<dyn SimObject>, memo: bool) -> crate::checker::ExploreReport {
    let mut mem = Memory::new(2, RmrModel::dsm());
    let word = mem.alloc_word(1, 0).unwrap();
    let mut table = ObjectTable::new();
    let object = table.add(make(word));
    let prog = table.add(Box::new(BroadcastProgram { object, owner: 1, ops: 1 }));
    let sys = System::new(table.freeze(), mem, &[(prog, 1), (prog, 1)]);
    let mon = BroadcastPathMonitor::new(BroadcastMonitor::new(object, 2), 1);
    explore(&sys, mon, ExploreConfig { max_depth: 30, crash_budget: 0, memo, max_states: 0 })
}

#[test]
fn explorer_catches_an_early_wait_return() {
    for memo in [false, true] {
        let r = broken(|word| Box::new(Eager { word }), memo);
        assert!(r.violation.unwrap().message.contains("before any Set"));
    }
}

#[test]
fn explorer_catches_a_lost_wakeup() {
    let r = broken(|word| Box::new(Silent { word }), true);
    assert!(r.violation.unwrap().message.contains("still blocked"));
}

/// Max RMRs of churn-free Sets, of all Sets, and of Waits.
fn max_costs(kind: BroadcastKind, n: usize) -> (u64, u64, u64) {
    let mut quiet = 0;
    let mut set = 0;
    let mut wait = 0;
    for seed in 0..200 {
        let (mut sys, object) = harness(n, 1, 3, kind, RmrModel::dsm()).unwrap();
        let mut sch = SeededRandom::new(RandomConfig { seed, ..Default::default() }, n, None);
        let h = run(&mut sys, &mut sch, Limits::default()).unwrap();
        assert!(check_history(&h, object, n).is_empty());
        for c in op_costs(&h, object) {
            match c.kind {
                OpKind::Set => {
                    set = set.max(c.rmr);
                    if c.churn_free {
                        quiet = quiet.max(c.rmr);
                    }
                }
                OpKind::Wait => wait = wait.max(c.rmr),
            }
        }
    }
    (quiet, set, wait)
}

#[test]
fn dsm_costs_are_constant_without_churn() {
    let (_, _, wait3) = max_costs(BroadcastKind::Dsm, 3);
    for n in [2, 3, 4, 8, 16] {
        let (quiet, _, wait) = max_costs(BroadcastKind::Dsm, n);
        assert!(quiet <= 1, "n={n}: churn-free set took {quiet} RMRs");
        assert!(wait <= 5, "n={n}: wait took {wait} RMRs");
        if n >= 3 {
            assert_eq!(wait, wait3, "n={n}");
        }
    }
}

#[test]
fn dsm_set_pays_for_departing_waiters() {
    let (_, set, _) = max_costs(BroadcastKind::Dsm, 16);
    assert!(set > 1);
}

#[test]
fn read_is_one_remote_reference() {
    for kind in [BroadcastKind::Cc, BroadcastKind::Dsm] {
        let mut mem = Memory::new(3, RmrModel::dsm());
        let object = match kind {
            BroadcastKind::Cc => BroadcastCc::new(&mut mem, 1).map(|b| Box::new(b) as Box<dyn SimObject>),
            BroadcastKind::Dsm => BroadcastDsm::new(&mut mem, 1).map(|b| Box::new(b) as Box<dyn SimObject>),
        }
        .unwrap();
        let mut table = ObjectTable::new();
        let object = table.add(object);
        let prog = table.add(Box::new(ReadProgram { object }));
        let mut sys = System::new(table.freeze(), mem, &[(prog, 2), (prog, 2), (prog, 2)]);
        let h = run(&mut sys, &mut crate::simkernel::RoundRobin::default(), Limits::default()).unwrap();
        let remote: Vec<_> = h.events.iter().filter(|e| e.rmr).collect();
        assert_eq!(remote.len(), 4, "{kind:?}");
        assert!(remote.iter().all(|e| e.pid != 1));
    }
}

#[test]
fn op_costs_skip_crashed_operations() {
    let o = ObjId(0);
    let h = History::from_kinds([
        (1, EventKind::Marker { marker: MarkerKind::SetBegin(1), lock: o }),
        (1, EventKind::Write),
        (1, EventKind::Crash { unsafe_for: vec![] }),
        (1, EventKind::Restart),
        (1, EventKind::Marker { marker: MarkerKind::SetBegin(1), lock: o }),
        (1, EventKind::Read),
        (1, EventKind::Marker { marker: MarkerKind::SetEnd(1), lock: o }),
    ]);
    let c = op_costs(&h, o);
    assert_eq!(c.len(), 1);
    assert_eq!((c[0].kind, c[0].steps, c[0].rmr), (OpKind::Set, 1, 0));
}

#[test]
fn monitor_rejects_non_incremental_sets() {
    let o = ObjId(0);
    let h = History::from_kinds([
        (1, EventKind::Marker { marker: MarkerKind::SetBegin(1), lock: o }),
        (1, EventKind::Marker { marker: MarkerKind::SetEnd(1), lock: o }),
        (1, EventKind::Marker { marker: MarkerKind::SetBegin(3), lock: o }),
    ]);
    assert!(matches!(check_history(&h, o, 2)[..], [BroadcastViolation::NotIncremental { x: 3, prev: 1, .. }]));
}
