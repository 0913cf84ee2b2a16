//! Strongly recoverable locks built from weakly recoverable filters.
//!
//! The building blocks are a two-port arbitrator, a test-and-set splitter and
//! a tournament tree of arbitrators used as the base lock. A semi-adaptive
//! level puts a WR-Lock filter in front of a splitter; the recursive lock
//! chains `levels` of them, with the tournament as the last core.

mod arbitrator;
mod semi;
mod splitter;
mod tournament;

use serde::{Deserialize, Serialize};

pub use arbitrator::{claimants, phase, side_name, Arbitrator, FINISH, LEFT, PHASE, RIGHT};
pub use semi::SemiAdaptive;
pub use splitter::{path, Splitter, NAVIGATE};
pub use tournament::{status, Tournament};

use crate::broadcast::BroadcastKind;
use crate::lockmodel::{LockInfo, LockKind, Topology};
use crate::reclaim::Reclaim;
use crate::simkernel::{Memory, ObjId, ObjectTable, RmrModel, SimError, StepBounds};
use crate::wrlock::{Alloc, WrLock};

/// How WR-Lock filters obtain their queue nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeSource {
    Fresh,
    Reclaimed(BroadcastKind),
}

/// Default depth of the recursive lock: `ceil(log2(n + 1))`.
pub fn default_levels(n: usize) -> u32 {
    (n as u64 + 1).next_power_of_two().trailing_zeros().max(1)
}

/// Incrementally assembles objects, shared memory and the lock topology.
#[derive(Debug)]
pub struct Builder {
    pub table: ObjectTable,
    pub mem: Memory,
    pub topology: Topology,
    pub wr: Vec<(ObjId, WrLock)>,
    pub reclaims: Vec<(ObjId, Reclaim)>,
    pub arbitrators: Vec<(ObjId, Arbitrator)>,
    pub splitters: Vec<(ObjId, Splitter)>,
}

impl Builder {
    pub fn new(n: usize, model: RmrModel) -> Self {
        Builder {
            table: ObjectTable::new(),
            mem: Memory::new(n, model),
            topology: Topology { n, target: None, locks: Vec::new() },
            wr: Vec::new(),
            reclaims: Vec::new(),
            arbitrators: Vec::new(),
            splitters: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.mem.n()
    }

    fn info(&mut self, id: ObjId, name: String, kind: LockKind, level: u32, bounds: StepBounds) {
        let strong = kind != LockKind::Wr;
        self.topology.push(LockInfo { id, name, kind, level, strong, bounds });
    }

    pub fn bounds_of(&self, id: ObjId) -> StepBounds {
        self.topology.lock(id).map(|l| l.bounds).unwrap_or_default()
    }

    /// A WR-Lock; `level` is 0 for a standalone lock.
    pub fn wr_lock(&mut self, level: u32, nodes: NodeSource) -> Result<ObjId, SimError> {
        let (alloc, retire) = match nodes {
            NodeSource::Fresh => (Alloc::Fresh, 0),
            NodeSource::Reclaimed(kind) => {
                let r = Reclaim::build(&mut self.table, &mut self.mem, kind)?;
                let id = self.table.add(Box::new(r.clone()));
                self.reclaims.push((id, r));
                (Alloc::Pool(id), Reclaim::retire_bound(kind, self.n()))
            }
        };
        let lock = WrLock::new(&mut self.mem, alloc)?;
        let name = if level == 0 { lock_name(&lock) } else { format!("filter[{level}]") };
        let id = self.table.add(Box::new(lock.clone()));
        self.wr.push((id, lock));
        self.info(id, name, LockKind::Wr, level, WrLock::bounds_with(retire));
        Ok(id)
    }

    pub fn arbitrator(&mut self, level: u32, label: impl Into<String>) -> Result<ObjId, SimError> {
        let arb = Arbitrator::new(&mut self.mem, label)?;
        let name = arb.label.clone();
        let id = self.table.add(Box::new(arb.clone()));
        self.arbitrators.push((id, arb));
        self.info(id, name, LockKind::Arbitrator, level, Arbitrator::bounds());
        Ok(id)
    }

    pub fn tournament(&mut self, level: u32) -> Result<ObjId, SimError> {
        let n = self.n();
        let height = Tournament::height_for(n);
        let mut nodes = Vec::new();
        for k in 1..(1usize << height) {
            nodes.push(self.arbitrator(level, format!("tournament-node[{k}]"))?);
        }
        let status = (1..=n).map(|p| self.mem.alloc_word(p, status::FREE)).collect::<Result<_, _>>()?;
        let t = Tournament { nodes, height, status };
        let id = self.table.add(Box::new(t));
        self.info(id, format!("tournament[h={height}]"), LockKind::Tournament, level, Tournament::bounds(height));
        Ok(id)
    }

    /// One semi-adaptive level around an existing core lock.
    pub fn semi(&mut self, level: u32, core: ObjId, nodes: NodeSource, kind: LockKind) -> Result<ObjId, SimError> {
        let filter = self.wr_lock(level.max(1), nodes)?;
        let splitter = Splitter::new(&mut self.mem)?;
        let splitter_obj = self.table.add(Box::new(splitter.clone()));
        self.splitters.push((splitter_obj, splitter.clone()));
        let arb = self.arbitrator(level, format!("arbitrator[{}]", level.max(1)))?;
        let lock = SemiAdaptive { level: level.max(1), filter, splitter_obj, splitter, core, arb };
        let bounds = SemiAdaptive::bounds(self.bounds_of(filter), self.bounds_of(core), self.bounds_of(arb));
        let id = self.table.add(Box::new(lock));
        self.info(id, format!("{}[{}]", kind_name(kind), level.max(1)), kind, level.max(1), bounds);
        Ok(id)
    }

    /// The recursive lock with `levels` semi-adaptive levels over a tournament.
    /// Returns the outermost level.
    pub fn super_adaptive(&mut self, levels: u32, nodes: NodeSource) -> Result<ObjId, SimError> {
        assert!(levels >= 1, "the recursive lock needs at least one level");
        let mut core = self.tournament(levels + 1)?;
        for level in (1..=levels).rev() {
            core = self.semi(level, core, nodes, LockKind::Super)?;
        }
        Ok(core)
    }

    /// The single-level semi-adaptive lock over a tournament.
    pub fn semi_adaptive(&mut self, nodes: NodeSource) -> Result<ObjId, SimError> {
        let core = self.tournament(2)?;
        self.semi(1, core, nodes, LockKind::Semi)
    }

    pub fn set_target(&mut self, id: ObjId) {
        self.topology.target = Some(id);
    }

    pub fn wr_of(&self, id: ObjId) -> Option<&WrLock> {
        self.wr.iter().find(|(i, _)| *i == id).map(|(_, l)| l)
    }

    pub fn reclaim_of(&self, id: ObjId) -> Option<&Reclaim> {
        self.reclaims.iter().find(|(i, _)| *i == id).map(|(_, r)| r)
    }
}

fn lock_name(l: &WrLock) -> String {
    use crate::simkernel::SimObject;
    l.name()
}

fn kind_name(kind: LockKind) -> &'static str {
    match kind {
        LockKind::Semi => "semi-adaptive",
        LockKind::Super => "super-adaptive",
        LockKind::Wr => "wr-lock",
        LockKind::Arbitrator => "arbitrator",
        LockKind::Tournament => "tournament",
    }
}
