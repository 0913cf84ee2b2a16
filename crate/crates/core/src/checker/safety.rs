use serde::{Deserialize, Serialize};

use super::intervals::Analysis;
use crate::simkernel::{EventKind, History, LockId, MarkerKind, Pid};

/// A point where two or more processes were in the CS at once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeViolation {
    pub seq: u64,
    pub in_cs: Vec<Pid>,
}

/// A point where more processes were in the CS than one plus the number of
/// active unsafe consequence intervals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsivenessViolation {
    pub seq: u64,
    pub in_cs: usize,
    pub active_unsafe: usize,
}

/// Points where a process entered the CS while another was still there.
pub fn check_me(h: &History, lock: LockId) -> Vec<MeViolation> {
    let cs = cs_intervals(h, lock);
    cs.iter()
        .filter_map(|&(_, t, _)| {
            let in_cs: Vec<Pid> = cs.iter().filter(|&&(_, b, e)| b <= t && t <= e).map(|&(p, _, _)| p).collect();
            (in_cs.len() > 1).then_some(MeViolation { seq: t, in_cs })
        })
        .collect()
}

/// ME violations that lie outside every consequence interval (must be empty
/// for a weakly recoverable lock).
pub fn unexplained_me_violations(analysis: &Analysis, me: &[MeViolation]) -> Vec<MeViolation> {
    me.iter().filter(|v| !analysis.intervals.iter().any(|ci| ci.contains(v.seq))).cloned().collect()
}

/// Closed CS intervals of `lock`: CsBegin to CsEnd, a crash or the horizon.
pub fn cs_intervals(h: &History, lock: LockId) -> Vec<(Pid, u64, u64)> {
    let horizon = h.events.last().map_or(0, |e| e.seq);
    let mut open: Vec<(Pid, u64)> = Vec::new();
    let mut out = Vec::new();
    for e in &h.events {
        let closes = match &e.kind {
            EventKind::Marker { marker: MarkerKind::CsBegin, lock: l } if *l == lock => {
                open.push((e.pid, e.seq));
                false
            }
            EventKind::Marker { marker: MarkerKind::CsEnd, lock: l } if *l == lock => true,
            EventKind::Crash { .. } => true,
            _ => false,
        };
        if closes {
            if let Some(i) = open.iter().position(|&(p, _)| p == e.pid) {
                let (p, b) = open.remove(i);
                out.push((p, b, e.seq));
            }
        }
    }
    out.extend(open.into_iter().map(|(p, b)| (p, b, horizon)));
    out.sort_by_key(|&(p, b, _)| (b, p));
    out
}

/// Checks `#in-CS <= 1 + #active unsafe consequence intervals` at every
/// point. Both sides are step functions, so it suffices to look at CS
/// starts and at the first point after each interval ends.
pub fn check_responsiveness(h: &History, analysis: &Analysis) -> Vec<ResponsivenessViolation> {
    let cs = cs_intervals(h, analysis.lock);
    let mut points: Vec<u64> = cs.iter().map(|&(_, b, _)| b).collect();
    points.extend(analysis.intervals.iter().filter(|ci| ci.unsafe_failure).map(|ci| ci.end + 1));
    points.sort_unstable();
    points.dedup();
    points
        .into_iter()
        .filter_map(|t| {
            let in_cs = cs.iter().filter(|&&(_, b, e)| b <= t && t <= e).count();
            let active = analysis.active_unsafe(t);
            (in_cs > 1 + active).then_some(ResponsivenessViolation { seq: t, in_cs, active_unsafe: active })
        })
        .collect()
}

/// Seqs of `PortViolation` markers (two claimants on one arbitrator side).
pub fn port_violations(h: &History) -> Vec<u64> {
    h.events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Marker { marker: MarkerKind::PortViolation, .. }))
        .map(|e| e.seq)
        .collect()
}

/// Crashes classified unsafe for a lock declared strongly recoverable.
pub fn unsafe_for_strong(h: &History, strong: &[LockId]) -> Vec<u64> {
    h.events
        .iter()
        .filter(|e| matches!(&e.kind, EventKind::Crash { unsafe_for } if unsafe_for.iter().any(|l| strong.contains(l))))
        .map(|e| e.seq)
        .collect()
}
