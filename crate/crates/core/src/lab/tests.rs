use super::*;
use crate::lockmodel::check_marker_grammar;
use crate::simkernel::{Adversary, RandomConfig, SeededRandom};

fn all_locks() -> Vec<LockSpec> {
    vec![
        LockSpec::wr(),
        LockSpec::Wr { reclaim: Some(BroadcastKind::Cc) },
        LockSpec::Wr { reclaim: Some(BroadcastKind::Dsm) },
        LockSpec::Tournament,
        LockSpec::Semi { reclaim: None },
        LockSpec::super_adaptive(2),
        LockSpec::Super { levels: None, reclaim: Some(BroadcastKind::Dsm) },
    ]
}

#[test]
fn every_lock_runs_with_crashes_and_keeps_grammar() {
    for lock in all_locks() {
        for model in [RmrModel::cc(), RmrModel::dsm()] {
            for seed in 0..20 {
                let spec = SystemSpec::new(3, lock.clone(), model).requests(3);
                let cfg = RandomConfig { seed, crash_probability: 0.05, ..Default::default() };
                let mut sch = SeededRandom::new(cfg, 3, None);
                let (_, h, _) = run_spec(&spec, &mut sch, Limits::default())
                    .unwrap_or_else(|e| panic!("{} seed {seed}: {e}", lock.label()));
                check_marker_grammar(&h).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", lock.label()));
            }
        }
    }
}

#[test]
fn arbitrator_spec_rejects_three_processes() {
    let spec = SystemSpec::new(3, LockSpec::Arbitrator, RmrModel::cc());
    assert_eq!(spec.build().unwrap_err(), SpecError::ArbitratorTooWide { n: 3 });
}

#[test]
fn crash_after_fas_puts_two_processes_in_the_cs() {
    let spec = SystemSpec::new(2, LockSpec::wr(), RmrModel::dsm());
    let mut built = spec.build().unwrap();
    let mut adv = Adversary::new(scenario::crash_after_fas(built.target));
    let (h, _) = built.run(&mut adv, Limits::default()).unwrap();
    assert!(adv.diverged().is_empty(), "diverged at {:?}", adv.diverged());
    let crash = h.events.iter().find(|e| matches!(e.kind, EventKind::Crash { .. })).unwrap();
    assert_eq!(crash.kind, EventKind::Crash { unsafe_for: vec![built.target] });
}

#[test]
fn escalation_reaches_each_level() {
    for x in 1..=4 {
        let spec = SystemSpec::new(4, LockSpec::super_adaptive(4), RmrModel::cc());
        let mut built = spec.build().unwrap();
        let mut adv = Adversary::new(scenario::escalation(&built.topology, x));
        built.run(&mut adv, Limits::default()).unwrap();
        assert!(adv.diverged().is_empty(), "x={x}: diverged at {:?}", adv.diverged());
    }
}

#[test]
fn doorway_is_measured_for_the_queue_lock() {
    let spec = SystemSpec::new(2, LockSpec::wr(), RmrModel::cc());
    assert!(measure_doorway(&spec).unwrap().unwrap() > 0);
}
