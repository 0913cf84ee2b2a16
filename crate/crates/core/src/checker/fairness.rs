use serde::{Deserialize, Serialize};

use super::intervals::Analysis;
use crate::lockmodel::Passage;
use crate::simkernel::{EventKind, History, LockId, MarkerKind, Pid};

/// `r` finished its doorway before `s` started its own, yet `s` reached the
/// CS before `r` started its Exit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcfsViolation {
    pub first: usize,
    pub second: usize,
    pub seq: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub ci_fcfs: Vec<FcfsViolation>,
    pub fcfs_1: Vec<FcfsViolation>,
    pub fcfs_2: Vec<FcfsViolation>,
    /// Per passage: the least `k` for which it is `k`-failure-concurrent.
    pub failure_concurrency: Vec<Option<u32>>,
    /// Per passage: whether its super-passage overlaps a consequence interval.
    pub ci_concurrent: Vec<bool>,
}

/// A failure-free passage whose super-passage has no other passage.
pub fn exclusive(a: &Analysis, p: &Passage) -> bool {
    p.failure_free && a.superpassages[p.superpassage].passages.len() == 1
}

/// Least `k` such that each passage is `k`-failure-concurrent, up to `max_k`.
///
/// Level 0: the passage ends with a crash or is the first one after a crash.
/// Level `k`: its super-passage overlaps another super-passage holding a
/// passage of level `k - 1`.
pub fn failure_concurrency(a: &Analysis, max_k: u32) -> Vec<Option<u32>> {
    let ps = &a.passages;
    let mut level: Vec<Option<u32>> = ps
        .iter()
        .map(|p| {
            let sp = &a.superpassages[p.superpassage];
            let after_crash = sp.passages.first() != Some(&p.id);
            (!p.failure_free || after_crash).then_some(0)
        })
        .collect();
    let win: Vec<(u64, u64)> = a.superpassages.iter().map(|sp| a.sp_window(sp)).collect();
    for k in 1..=max_k {
        // Super-passages holding a passage of level k - 1.
        let hot: Vec<usize> = a
            .superpassages
            .iter()
            .filter(|sp| sp.passages.iter().any(|&i| level[i] == Some(k - 1)))
            .map(|sp| sp.id)
            .collect();
        let mut changed = false;
        for p in ps {
            if level[p.id].is_some() {
                continue;
            }
            let (a0, b0) = win[p.superpassage];
            let hit = hot.iter().any(|&s| s != p.superpassage && win[s].0 <= b0 && a0 <= win[s].1);
            if hit {
                level[p.id] = Some(k);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    level
}

/// All FCFS violations among eligible pairs of passages.
fn fcfs_pairs(a: &Analysis, eligible: &[bool], first_ok: &dyn Fn(&Passage) -> bool) -> Vec<FcfsViolation> {
    let mut out = Vec::new();
    for r in a.passages.iter().filter(|r| eligible[r.id] && first_ok(r)) {
        let Some(door) = r.doorway_end else { continue };
        for s in a.passages.iter().filter(|s| eligible[s.id] && s.pid != r.pid) {
            let (Some(eb), Some(cs)) = (s.enter_begin, s.cs_begin) else { continue };
            if door < eb && r.exit_begin.is_none_or(|x| x > cs) {
                out.push(FcfsViolation { first: r.id, second: s.id, seq: cs });
            }
        }
    }
    out
}

pub fn check_fairness(a: &Analysis) -> FairnessReport {
    let fc = failure_concurrency(a, 2);
    let ci: Vec<bool> = a.passages.iter().map(|p| a.ci_concurrent(p.superpassage)).collect();
    let excl: Vec<bool> = a.passages.iter().map(|p| exclusive(a, p)).collect();
    let ci_fcfs = fcfs_pairs(a, &excl, &|r| {
        !a.intervals.iter().any(|c| c.overlaps(r.start, r.end_or(a.horizon)))
    });
    let k_fcfs = |k: u32| {
        let ok: Vec<bool> = fc.iter().map(|l| !l.is_some_and(|l| l <= k)).collect();
        fcfs_pairs(a, &ok, &|_| true)
    };
    FairnessReport { ci_fcfs, fcfs_1: k_fcfs(1), fcfs_2: k_fcfs(2), failure_concurrency: fc, ci_concurrent: ci }
}

/// Hand-built histories with a known classification of one passage.
pub mod shapes {
    use super::*;

    /// One process's super-passage from `start` to `end`, with crashes at the given times.
    #[derive(Clone, Debug)]
    pub struct Sp {
        pub pid: Pid,
        pub start: i64,
        pub end: i64,
        pub crashes: Vec<i64>,
    }

    /// Builds a marker history for `lock` from super-passage windows. Times
    /// only fix the order of events; they are renumbered from 0.
    pub fn build(lock: LockId, sps: &[Sp]) -> History {
        let mut items: Vec<(i64, u32, Pid, EventKind)> = Vec::new();
        let m = |marker| EventKind::Marker { marker, lock };
        for sp in sps {
            let mut t = sp.start * 100;
            let seg = |items: &mut Vec<_>, at: i64, kinds: &[MarkerKind]| {
                for (i, &k) in kinds.iter().enumerate() {
                    items.push((at, i as u32, sp.pid, m(k)));
                }
            };
            for &c in &sp.crashes {
                seg(&mut items, t, &[MarkerKind::RecoverBegin, MarkerKind::RecoverEnd, MarkerKind::EnterBegin]);
                items.push((c * 100, 0, sp.pid, EventKind::Crash { unsafe_for: vec![] }));
                items.push((c * 100, 1, sp.pid, EventKind::Restart));
                t = c * 100 + 1;
            }
            use MarkerKind::*;
            seg(&mut items, t, &[RecoverBegin, RecoverEnd, EnterBegin, DoorwayEnd, CsBegin]);
            seg(&mut items, sp.end * 100, &[CsEnd, ExitBegin, ExitEnd]);
        }
        items.sort_by_key(|(t, i, p, _)| (*t, *p, *i));
        History::from_kinds(items.into_iter().map(|(_, _, p, k)| (p, k)))
    }

    /// Classification of the last passage of `pid`: (least failure-concurrency level, CI-concurrent).
    pub fn classify_last(lock: LockId, sps: &[Sp], pid: Pid) -> (Option<u32>, bool) {
        let h = build(lock, sps);
        let a = Analysis::new(&h, lock).expect("well-formed shape");
        let r = a.passages.iter().rev().find(|p| p.pid == pid).expect("passage of pid");
        let fc = failure_concurrency(&a, 3);
        (fc[r.id], a.ci_concurrent(r.superpassage))
    }

    fn sp(pid: Pid, start: i64, end: i64, crashes: &[i64]) -> Sp {
        Sp { pid, start, end, crashes: crashes.to_vec() }
    }

    /// `r3` is 1-failure-concurrent but not CI-concurrent.
    pub fn one_fc_not_ci() -> (Vec<Sp>, Pid) {
        (vec![sp(1, 0, 8, &[5]), sp(3, 1, 3, &[])], 3)
    }

    /// `r4` is CI-concurrent but not 1-failure-concurrent.
    pub fn ci_not_one_fc() -> (Vec<Sp>, Pid) {
        (vec![sp(1, 0, 4, &[2]), sp(2, 1, 10, &[]), sp(4, 6, 8, &[])], 4)
    }

    /// `r5` is 2-failure-concurrent but not CI-concurrent (times doubled).
    pub fn two_fc_not_ci() -> (Vec<Sp>, Pid) {
        (vec![sp(1, 2, 10, &[6]), sp(2, 0, 4, &[]), sp(5, -2, 1, &[])], 5)
    }
}
