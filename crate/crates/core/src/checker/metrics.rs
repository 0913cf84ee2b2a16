use serde::{Deserialize, Serialize};

use super::intervals::Analysis;
use crate::lockmodel::{LockKind, Topology};
use crate::simkernel::{EventKind, History, MarkerKind};

/// One row per passage of the analysed lock. Column order is frozen: it is
/// the CSV layout written by the CLI.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run: String,
    pub n: usize,
    pub lock: String,
    pub pid: usize,
    pub passage: usize,
    pub superpassage: usize,
    /// Deepest level of a layered lock entered during the passage; 0 otherwise.
    pub level: u32,
    pub rmr: u64,
    pub steps: u64,
    pub failure_free: bool,
    pub completed: bool,
    pub failure_density: usize,
    pub point_contention: usize,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "run",
    "n",
    "lock",
    "pid",
    "passage",
    "superpassage",
    "level",
    "rmr",
    "steps",
    "failure_free",
    "completed",
    "failure_density",
    "point_contention",
];

/// Per-process prefix sums over a history.
struct PerPid {
    seqs: Vec<u64>,
    rmr: Vec<u64>,
    steps: Vec<u64>,
}

impl PerPid {
    fn range(&self, a: u64, b: u64) -> (usize, usize) {
        (self.seqs.partition_point(|&s| s < a), self.seqs.partition_point(|&s| s <= b))
    }

    fn sum(v: &[u64], (i, j): (usize, usize)) -> u64 {
        v[j] - v[i]
    }
}

fn per_pid(h: &History, n: usize) -> Vec<PerPid> {
    let mut out: Vec<PerPid> =
        (0..=n).map(|_| PerPid { seqs: Vec::new(), rmr: vec![0], steps: vec![0] }).collect();
    for e in &h.events {
        let Some(p) = out.get_mut(e.pid) else { continue };
        p.seqs.push(e.seq);
        let r = *p.rmr.last().unwrap() + e.rmr as u64;
        let s = *p.steps.last().unwrap() + e.kind.is_step() as u64;
        p.rmr.push(r);
        p.steps.push(s);
    }
    out
}

/// Metrics for every passage of the analysed lock.
pub fn metrics(h: &History, topology: &Topology, analysis: &Analysis, run: &str) -> Vec<MetricsRow> {
    let n = topology.n;
    let pp = per_pid(h, n);
    let name = topology.lock(analysis.lock).map_or_else(|| format!("{:?}", analysis.lock), |l| l.name.clone());
    // (seq, level) of EnterBegin markers of layered locks, per pid.
    let mut levels: Vec<Vec<(u64, u32)>> = vec![Vec::new(); n + 1];
    for e in &h.events {
        if let EventKind::Marker { marker: MarkerKind::EnterBegin, lock } = e.kind {
            if let Some(info) = topology.lock(lock) {
                if matches!(info.kind, LockKind::Semi | LockKind::Super) && e.pid <= n {
                    levels[e.pid].push((e.seq, info.level));
                }
            }
        }
    }
    let f: Vec<usize> = (0..analysis.superpassages.len()).map(|s| analysis.failure_density(s)).collect();
    let c: Vec<usize> = (0..analysis.superpassages.len()).map(|s| analysis.point_contention(s)).collect();
    analysis
        .passages
        .iter()
        .map(|p| {
            let (a, b) = (p.start, p.end_or(analysis.horizon));
            let r = pp[p.pid].range(a, b);
            let level = levels[p.pid]
                .iter()
                .filter(|&&(s, _)| a <= s && s <= b)
                .map(|&(_, l)| l)
                .max()
                .unwrap_or(0);
            MetricsRow {
                run: run.to_string(),
                n,
                lock: name.clone(),
                pid: p.pid,
                passage: p.id,
                superpassage: p.superpassage,
                level,
                rmr: PerPid::sum(&pp[p.pid].rmr, r),
                steps: PerPid::sum(&pp[p.pid].steps, r),
                failure_free: p.failure_free,
                completed: p.completed,
                failure_density: f[p.superpassage],
                point_contention: c[p.superpassage],
            }
        })
        .collect()
}
