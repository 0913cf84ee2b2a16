//! History analysis: passages, consequence intervals, failure-density,
//! point contention and checks of every property the locks promise.

mod bounds;
mod explore;
mod fairness;
mod intervals;
mod metrics;
mod profile;
mod safety;

use serde::{Deserialize, Serialize};

pub use bounds::{check_step_bounds, BoundKind, BoundTracker, BoundViolation};
pub use explore::{
    explore, BroadcastPathMonitor, ExploreConfig, ExploreReport, ExploreViolation, LockMonitor, PathMonitor,
};
pub use fairness::{check_fairness, exclusive, failure_concurrency, shapes, FairnessReport, FcfsViolation};
pub use intervals::{consequence_intervals, Analysis, ConsequenceInterval};
pub use metrics::{metrics, MetricsRow, CSV_COLUMNS};
pub use profile::{adaptive_envelope, envelope_violations, Cell, Profile};
pub use safety::{
    check_me, check_responsiveness, cs_intervals, port_violations, unexplained_me_violations, unsafe_for_strong,
    MeViolation, ResponsivenessViolation,
};

use crate::lockmodel::{check_marker_grammar, locality_violations, LockKind, LockModelError, Topology};
use crate::simkernel::{History, LockId};

/// Verdicts for one history. Hard violations make `clean()` false.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub lock: LockId,
    pub passages: usize,
    pub superpassages: usize,
    pub failures: usize,
    pub unsafe_failures: usize,
    /// ME violations of the analysed lock (allowed for a weak lock inside consequence intervals).
    pub me: Vec<MeViolation>,
    /// ME violations of a strongly recoverable lock, or outside every consequence interval.
    pub me_hard: Vec<MeViolation>,
    pub responsiveness: Vec<ResponsivenessViolation>,
    pub bounds: Vec<BoundViolation>,
    pub ports: Vec<u64>,
    pub locality: Vec<u64>,
    pub strong_unsafe: Vec<u64>,
    /// Whether the lock promises CI-FCFS and 1-FCFS (the tournament and the arbitrator do not).
    pub fcfs_claimed: bool,
    pub ci_fcfs: usize,
    pub fcfs_1: usize,
    pub fcfs_2: usize,
    pub max_failure_density: usize,
    pub max_point_contention: usize,
}

impl Report {
    pub fn clean(&self) -> bool {
        self.me_hard.is_empty()
            && self.responsiveness.is_empty()
            && self.bounds.is_empty()
            && self.ports.is_empty()
            && self.locality.is_empty()
            && self.strong_unsafe.is_empty()
            && (!self.fcfs_claimed || (self.ci_fcfs == 0 && self.fcfs_1 == 0))
    }

    /// Deterministic JSON rendering.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs every history check against the topology's target lock.
pub fn check_history(h: &History, topology: &Topology) -> Result<Report, LockModelError> {
    check_marker_grammar(h)?;
    let lock = topology.target.expect("topology has a target lock");
    let info = topology.lock(lock).expect("target is in the topology");
    let a = Analysis::new(h, lock)?;
    let me = check_me(h, lock);
    let me_hard = if info.strong { me.clone() } else { unexplained_me_violations(&a, &me) };
    let mut me_hard = me_hard;
    // Strongly recoverable components must never overlap either.
    for l in topology.locks.iter().filter(|l| l.strong && l.id != lock) {
        me_hard.extend(check_me(h, l.id));
    }
    let responsiveness = if info.kind == LockKind::Wr { check_responsiveness(h, &a) } else { Vec::new() };
    let strong: Vec<LockId> = topology.locks.iter().filter(|l| l.strong).map(|l| l.id).collect();
    let fair = check_fairness(&a);
    let sps = a.superpassages.len();
    Ok(Report {
        lock,
        passages: a.passages.len(),
        superpassages: sps,
        failures: a.intervals.len(),
        unsafe_failures: a.intervals.iter().filter(|c| c.unsafe_failure).count(),
        me,
        me_hard,
        responsiveness,
        bounds: check_step_bounds(h, topology),
        ports: port_violations(h),
        locality: locality_violations(h),
        strong_unsafe: unsafe_for_strong(h, &strong),
        fcfs_claimed: matches!(info.kind, LockKind::Wr | LockKind::Semi | LockKind::Super),
        ci_fcfs: fair.ci_fcfs.len(),
        fcfs_1: fair.fcfs_1.len(),
        fcfs_2: fair.fcfs_2.len(),
        max_failure_density: (0..sps).map(|s| a.failure_density(s)).max().unwrap_or(0),
        max_point_contention: (0..sps).map(|s| a.point_contention(s)).max().unwrap_or(0),
    })
}
