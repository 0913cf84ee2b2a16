use serde::{Deserialize, Serialize};

use crate::simkernel::{EventKind, History, LockId, MarkerKind, Pid};

use super::LockModelError;

/// Steps of one process from RecoverBegin to ExitEnd or a crash, whichever comes first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: usize,
    pub pid: Pid,
    pub start: u64,
    /// Seq of the closing ExitEnd or Crash; `None` if the history ends first.
    pub end: Option<u64>,
    /// True unless the passage was ended by a crash.
    pub failure_free: bool,
    /// True iff the passage reached ExitEnd.
    pub completed: bool,
    pub enter_begin: Option<u64>,
    pub doorway_end: Option<u64>,
    pub cs_begin: Option<u64>,
    pub exit_begin: Option<u64>,
    pub superpassage: usize,
}

impl Passage {
    pub fn end_or(&self, horizon: u64) -> u64 {
        self.end.unwrap_or(horizon)
    }
}

/// Consecutive passages of one process, closed by its first failure-free passage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperPassage {
    pub id: usize,
    pub pid: Pid,
    pub passages: Vec<usize>,
    pub start: u64,
    /// Seq of the final ExitEnd; `None` if incomplete.
    pub end: Option<u64>,
    pub complete: bool,
}

impl SuperPassage {
    pub fn end_or(&self, horizon: u64) -> u64 {
        self.end.unwrap_or(horizon)
    }

    pub fn failure_free(&self) -> bool {
        self.complete && self.passages.len() == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Gram {
    Idle,
    Recovering,
    Recovered,
    Entering { doorway: bool },
    InCs,
    CsDone,
    Exiting,
}

fn bad(seq: u64, pid: Pid, reason: impl Into<String>) -> LockModelError {
    LockModelError::MalformedHistory { seq, pid, reason: reason.into() }
}

/// Splits the marker stream of `lock` into passages, validating segment order.
pub fn classify_passages(h: &History, lock: LockId) -> Result<Vec<Passage>, LockModelError> {
    Ok(classify(h, lock)?.0)
}

/// Groups passages into super-passages.
pub fn classify_superpassages(h: &History, lock: LockId) -> Result<Vec<SuperPassage>, LockModelError> {
    Ok(classify(h, lock)?.1)
}

/// Both views at once; passage `superpassage` fields index into the second vector.
pub fn classify(h: &History, lock: LockId) -> Result<(Vec<Passage>, Vec<SuperPassage>), LockModelError> {
    let n = h.events.iter().map(|e| e.pid).max().unwrap_or(0);
    let mut gram = vec![Gram::Idle; n + 1];
    let mut open: Vec<Option<usize>> = vec![None; n + 1];
    let mut open_sp: Vec<Option<usize>> = vec![None; n + 1];
    let mut passages: Vec<Passage> = Vec::new();
    let mut sps: Vec<SuperPassage> = Vec::new();

    for e in &h.events {
        let pid = e.pid;
        match &e.kind {
            EventKind::Crash { .. } => {
                if let Some(i) = open[pid].take() {
                    passages[i].end = Some(e.seq);
                    passages[i].failure_free = false;
                }
                gram[pid] = Gram::Idle;
            }
            EventKind::Marker { marker, lock: l } if *l == lock => {
                let g = gram[pid];
                let next = match (marker, g) {
                    (MarkerKind::NcsBegin, Gram::Idle) => Gram::Idle,
                    (MarkerKind::RecoverBegin, Gram::Idle) => {
                        let sp = match open_sp[pid] {
                            Some(sp) => sp,
                            None => {
                                sps.push(SuperPassage {
                                    id: sps.len(),
                                    pid,
                                    passages: Vec::new(),
                                    start: e.seq,
                                    end: None,
                                    complete: false,
                                });
                                open_sp[pid] = Some(sps.len() - 1);
                                sps.len() - 1
                            }
                        };
                        let id = passages.len();
                        sps[sp].passages.push(id);
                        passages.push(Passage {
                            id,
                            pid,
                            start: e.seq,
                            end: None,
                            failure_free: true,
                            completed: false,
                            enter_begin: None,
                            doorway_end: None,
                            cs_begin: None,
                            exit_begin: None,
                            superpassage: sp,
                        });
                        open[pid] = Some(id);
                        Gram::Recovering
                    }
                    (MarkerKind::RecoverEnd, Gram::Recovering) => Gram::Recovered,
                    (MarkerKind::EnterBegin, Gram::Recovered) => {
                        passages[open[pid].unwrap()].enter_begin = Some(e.seq);
                        Gram::Entering { doorway: false }
                    }
                    (MarkerKind::DoorwayEnd, Gram::Entering { doorway: false }) => {
                        passages[open[pid].unwrap()].doorway_end = Some(e.seq);
                        Gram::Entering { doorway: true }
                    }
                    (MarkerKind::CsBegin, Gram::Entering { .. }) => {
                        passages[open[pid].unwrap()].cs_begin = Some(e.seq);
                        Gram::InCs
                    }
                    (MarkerKind::CsEnd, Gram::InCs) => Gram::CsDone,
                    (MarkerKind::ExitBegin, Gram::CsDone) => {
                        passages[open[pid].unwrap()].exit_begin = Some(e.seq);
                        Gram::Exiting
                    }
                    (MarkerKind::ExitEnd, Gram::Exiting) => {
                        let i = open[pid].take().unwrap();
                        passages[i].end = Some(e.seq);
                        passages[i].completed = true;
                        let sp = open_sp[pid].take().unwrap();
                        sps[sp].end = Some(e.seq);
                        sps[sp].complete = true;
                        Gram::Idle
                    }
                    (
                        MarkerKind::SetBegin(_)
                        | MarkerKind::SetEnd(_)
                        | MarkerKind::WaitBegin(_)
                        | MarkerKind::WaitEnd(_)
                        | MarkerKind::PortViolation,
                        g,
                    ) => g,
                    (m, g) => return Err(bad(e.seq, pid, format!("{m:?} in state {g:?}"))),
                };
                gram[pid] = next;
            }
            _ => {}
        }
    }
    Ok((passages, sps))
}

/// Checks segment order for every lock that appears in the history.
pub fn check_marker_grammar(h: &History) -> Result<(), LockModelError> {
    let mut locks: Vec<LockId> = h.events.iter().filter_map(|e| e.kind.marker().map(|m| m.1)).collect();
    locks.sort();
    locks.dedup();
    for l in locks {
        classify(h, l)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Safety {
    Safe,
    Unsafe,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub seq: u64,
    pub pid: Pid,
    pub safety: Safety,
}

/// Every crash in the history, classified with respect to `lock`.
pub fn unsafe_failures(h: &History, lock: LockId) -> Vec<FailureRecord> {
    h.events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Crash { unsafe_for } => Some(FailureRecord {
                seq: e.seq,
                pid: e.pid,
                safety: if unsafe_for.contains(&lock) { Safety::Unsafe } else { Safety::Safe },
            }),
            _ => None,
        })
        .collect()
}

/// Seqs of crashes that were unsafe for more than one lock at once.
pub fn locality_violations(h: &History) -> Vec<u64> {
    h.events
        .iter()
        .filter(|e| matches!(&e.kind, EventKind::Crash { unsafe_for } if unsafe_for.len() > 1))
        .map(|e| e.seq)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkernel::ObjId;

    const L: LockId = ObjId(1);

    fn m(pid: Pid, marker: MarkerKind) -> (Pid, EventKind) {
        (pid, EventKind::Marker { marker, lock: L })
    }

    fn crash(pid: Pid) -> (Pid, EventKind) {
        (pid, EventKind::Crash { unsafe_for: vec![] })
    }

    fn full_passage(pid: Pid) -> Vec<(Pid, EventKind)> {
        use MarkerKind::*;
        vec![
            m(pid, RecoverBegin),
            m(pid, RecoverEnd),
            m(pid, EnterBegin),
            m(pid, DoorwayEnd),
            m(pid, CsBegin),
            (pid, EventKind::LocalStep),
            m(pid, CsEnd),
            m(pid, ExitBegin),
            m(pid, ExitEnd),
        ]
    }

    #[test]
    fn one_request_one_passage() {
        let mut ev = vec![m(1, MarkerKind::NcsBegin), (1, EventKind::LocalStep)];
        ev.extend(full_passage(1));
        let h = History::from_kinds(ev);
        let (ps, sps) = classify(&h, L).unwrap();
        assert_eq!(ps.len(), 1);
        assert!(ps[0].failure_free && ps[0].completed);
        assert_eq!(sps.len(), 1);
        assert!(sps[0].failure_free());
    }

    #[test]
    fn crash_in_cs_then_retry() {
        use MarkerKind::*;
        let mut ev = vec![
            m(1, NcsBegin),
            m(1, RecoverBegin),
            m(1, RecoverEnd),
            m(1, EnterBegin),
            m(1, CsBegin),
            crash(1),
            (1, EventKind::Restart),
            m(1, NcsBegin),
        ];
        ev.extend(full_passage(1));
        let h = History::from_kinds(ev);
        let (ps, sps) = classify(&h, L).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(!ps[0].failure_free);
        assert!(ps[1].failure_free);
        assert_eq!(sps.len(), 1);
        assert_eq!(sps[0].passages, vec![0, 1]);
        assert!(!sps[0].failure_free());
    }

    #[test]
    fn crash_in_ncs_opens_no_passage() {
        // Hand-built: NCS marker, local step, crash, restart, NCS marker, local step.
        let h = History::from_kinds([
            m(1, MarkerKind::NcsBegin),
            (1, EventKind::LocalStep),
            crash(1),
            (1, EventKind::Restart),
            m(1, MarkerKind::NcsBegin),
            (1, EventKind::LocalStep),
        ]);
        assert!(classify_passages(&h, L).unwrap().is_empty());
        let f = unsafe_failures(&h, L);
        assert_eq!(f, vec![FailureRecord { seq: 2, pid: 1, safety: Safety::Safe }]);
    }

    #[test]
    fn three_crashes_then_success_is_one_superpassage() {
        use MarkerKind::*;
        let mut ev = Vec::new();
        for _ in 0..3 {
            ev.extend([m(1, RecoverBegin), m(1, RecoverEnd), m(1, EnterBegin), crash(1), (1, EventKind::Restart)]);
        }
        ev.extend(full_passage(1));
        let sps = classify_superpassages(&History::from_kinds(ev), L).unwrap();
        assert_eq!(sps.len(), 1);
        assert_eq!(sps[0].passages.len(), 4);
        assert!(sps[0].complete);
    }

    #[test]
    fn truncated_history_leaves_incomplete_superpassage() {
        use MarkerKind::*;
        let h = History::from_kinds([m(1, RecoverBegin), m(1, RecoverEnd), m(1, EnterBegin)]);
        let (ps, sps) = classify(&h, L).unwrap();
        assert_eq!(ps[0].end, None);
        assert!(!sps[0].complete);
    }

    #[test]
    fn out_of_order_markers_are_rejected() {
        use MarkerKind::*;
        let h = History::from_kinds([m(1, RecoverBegin), m(1, CsBegin)]);
        assert!(matches!(classify(&h, L), Err(LockModelError::MalformedHistory { seq: 1, .. })));
        assert!(check_marker_grammar(&h).is_err());
    }

    #[test]
    fn unsafe_classification_uses_crash_annotation() {
        let h = History::from_kinds([
            (1, EventKind::Crash { unsafe_for: vec![L] }),
            (2, EventKind::Crash { unsafe_for: vec![L, ObjId(2)] }),
        ]);
        let f = unsafe_failures(&h, L);
        assert_eq!(f[0].safety, Safety::Unsafe);
        assert_eq!(unsafe_failures(&h, ObjId(3))[0].safety, Safety::Safe);
        assert_eq!(locality_violations(&h), vec![1]);
    }
}
