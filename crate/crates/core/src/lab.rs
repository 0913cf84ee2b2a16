//! Assembling runnable systems from declarative specs, run-time monitors and
//! scripted scenarios.

use serde::{Deserialize, Serialize};

use crate::broadcast::BroadcastKind;
use crate::composite::{default_levels, Builder, NodeSource, Arbitrator, Splitter, LEFT, RIGHT};
use crate::lockmodel::{ExecLoop, LockKind, Topology};
use crate::reclaim::Reclaim;
use crate::simkernel::{
    run_checked, Directive, Event, EventKind, History, Limits, MarkerKind, ObjId, RmrModel, RunError, Scheduler,
    SimError, System,
};
use crate::wrlock::{Alloc, ChainMonitor, WrLock};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("n must be between 1 and {max}, got {n}")]
    BadN { n: usize, max: usize },
    #[error("the standalone arbitrator has two ports, so n must be at most 2 (got {n})")]
    ArbitratorTooWide { n: usize },
    #[error("the recursive lock needs at least one level")]
    NoLevels,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Which lock the application calls.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LockSpec {
    Wr {
        #[serde(default)]
        reclaim: Option<BroadcastKind>,
    },
    Arbitrator,
    Tournament,
    Semi {
        #[serde(default)]
        reclaim: Option<BroadcastKind>,
    },
    Super {
        /// Defaults to `ceil(log2(n + 1))`.
        #[serde(default)]
        levels: Option<u32>,
        #[serde(default)]
        reclaim: Option<BroadcastKind>,
    },
}

impl LockSpec {
    pub fn wr() -> Self {
        LockSpec::Wr { reclaim: None }
    }

    pub fn super_adaptive(levels: u32) -> Self {
        LockSpec::Super { levels: Some(levels), reclaim: None }
    }

    pub fn label(&self) -> String {
        let mr = |r: &Option<BroadcastKind>| match r {
            None => String::new(),
            Some(BroadcastKind::Cc) => "-mr-cc".into(),
            Some(BroadcastKind::Dsm) => "-mr-dsm".into(),
        };
        match self {
            LockSpec::Wr { reclaim } => format!("wr{}", mr(reclaim)),
            LockSpec::Arbitrator => "arbitrator".into(),
            LockSpec::Tournament => "tournament".into(),
            LockSpec::Semi { reclaim } => format!("semi{}", mr(reclaim)),
            LockSpec::Super { levels, reclaim } => match levels {
                Some(l) => format!("super{l}{}", mr(reclaim)),
                None => format!("super{}", mr(reclaim)),
            },
        }
    }

    fn nodes(&self) -> NodeSource {
        match self {
            LockSpec::Wr { reclaim } | LockSpec::Semi { reclaim } | LockSpec::Super { reclaim, .. } => {
                reclaim.map_or(NodeSource::Fresh, NodeSource::Reclaimed)
            }
            _ => NodeSource::Fresh,
        }
    }
}

fn one() -> u32 {
    1
}

/// A complete, self-contained description of a simulated system.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n: usize,
    pub lock: LockSpec,
    pub model: RmrModel,
    /// Requests per process.
    #[serde(default = "one")]
    pub requests: u32,
    /// Local steps inside each CS.
    #[serde(default = "one")]
    pub cs_steps: u32,
}

impl SystemSpec {
    pub fn new(n: usize, lock: LockSpec, model: RmrModel) -> Self {
        SystemSpec { n, lock, model, requests: 1, cs_steps: 1 }
    }

    pub fn requests(mut self, r: u32) -> Self {
        self.requests = r;
        self
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if !(1..=crate::simkernel::MAX_PROCS).contains(&self.n) {
            return Err(SpecError::BadN { n: self.n, max: crate::simkernel::MAX_PROCS });
        }
        match self.lock {
            LockSpec::Arbitrator if self.n > 2 => Err(SpecError::ArbitratorTooWide { n: self.n }),
            LockSpec::Super { levels: Some(0), .. } => Err(SpecError::NoLevels),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Built, SpecError> {
        self.validate()?;
        let mut b = Builder::new(self.n, self.model);
        let nodes = self.lock.nodes();
        let target = match &self.lock {
            LockSpec::Wr { .. } => b.wr_lock(0, nodes)?,
            LockSpec::Arbitrator => b.arbitrator(0, "arbitrator")?,
            LockSpec::Tournament => b.tournament(0)?,
            LockSpec::Semi { .. } => b.semi_adaptive(nodes)?,
            LockSpec::Super { levels, .. } => b.super_adaptive(levels.unwrap_or_else(|| default_levels(self.n)), nodes)?,
        };
        b.set_target(target);
        let mut prog = ExecLoop::new(target);
        prog.cs_steps = self.cs_steps.clamp(1, u16::MAX as u32) as u16;
        if self.lock == LockSpec::Arbitrator {
            prog.arg = vec![LEFT, RIGHT];
        }
        let prog = b.table.add(Box::new(prog));
        let programs = vec![(prog, self.requests); self.n];
        let Builder { table, mem, topology, wr, reclaims, arbitrators, splitters } = b;
        let system = System::new(table.freeze(), mem, &programs);
        Ok(Built { system, topology, target, wr, reclaims, arbitrators, splitters })
    }
}

/// A freshly built system and what is needed to monitor it.
#[derive(Debug, Clone)]
pub struct Built {
    pub system: System,
    pub topology: Topology,
    pub target: ObjId,
    pub wr: Vec<(ObjId, WrLock)>,
    pub reclaims: Vec<(ObjId, Reclaim)>,
    pub arbitrators: Vec<(ObjId, Arbitrator)>,
    pub splitters: Vec<(ObjId, Splitter)>,
}

impl Built {
    pub fn monitor(&self) -> RuntimeMonitor {
        let chains = self
            .wr
            .iter()
            .filter(|(_, l)| l.alloc == Alloc::Fresh)
            .map(|(id, l)| ChainMonitor::new(*id, l))
            .collect();
        let n = self.topology.n;
        RuntimeMonitor {
            chains,
            reclaims: self.reclaims.iter().map(|(_, r)| r.clone()).collect(),
            node_limit: 2 * n * Reclaim::pool_size(n),
            max_live_nodes: 0,
        }
    }

    /// Runs to completion with the run-time monitor checking every step.
    pub fn run(&mut self, sched: &mut dyn Scheduler, limits: Limits) -> Result<(History, RuntimeMonitor), RunError> {
        let mut mon = self.monitor();
        let h = run_checked(&mut self.system, sched, limits, &mut |sys, ev| mon.check(sys, ev))?;
        Ok((h, mon))
    }
}

/// Invariants checked after every scheduling decision: the queue structure
/// of each fresh-allocation WR-Lock, the counter chain of each reclamation
/// object and the node-space bound.
#[derive(Clone, Debug)]
pub struct RuntimeMonitor {
    pub chains: Vec<ChainMonitor>,
    pub reclaims: Vec<Reclaim>,
    pub node_limit: usize,
    pub max_live_nodes: usize,
}

impl RuntimeMonitor {
    pub fn check(&mut self, sys: &System, events: &[Event]) -> Result<(), String> {
        for c in &mut self.chains {
            c.observe(sys.mem(), events).map_err(|e| e.to_string())?;
        }
        for r in &self.reclaims {
            r.check_counters(sys.mem())?;
            let live = r.live_nodes(sys.mem());
            self.max_live_nodes = self.max_live_nodes.max(live);
            if live > self.node_limit {
                return Err(format!("{live} live nodes exceed the bound {}", self.node_limit));
            }
        }
        Ok(())
    }
}

/// Own steps of a solo, failure-free passage from `EnterBegin` to `DoorwayEnd`
/// of the target lock. `None` if the lock has no doorway marker.
pub fn measure_doorway(spec: &SystemSpec) -> Result<Option<u32>, SpecError> {
    let mut solo = spec.clone();
    solo.requests = 1;
    let mut built = solo.build()?;
    let target = built.target;
    let script = vec![Directive::RunSolo { pid: 1, max_steps: 100_000 }];
    let mut adv = crate::simkernel::Adversary::new(script);
    let h = run_checked(&mut built.system, &mut adv, Limits::default(), &mut |_, _| Ok(()))
        .map_err(|e| SpecError::Sim(match e {
            RunError::Fault { error, .. } => error,
            _ => SimError::Stuck { pid: 1 },
        }))?;
    let mut counting = false;
    let mut steps = 0;
    for e in h.events.iter().filter(|e| e.pid == 1) {
        match e.kind {
            EventKind::Marker { marker: MarkerKind::EnterBegin, lock } if lock == target => counting = true,
            EventKind::Marker { marker: MarkerKind::DoorwayEnd, lock } if lock == target && counting => {
                return Ok(Some(steps))
            }
            ref k if counting && k.is_step() => steps += 1,
            _ => {}
        }
    }
    Ok(None)
}

/// Scripted scenarios.
pub mod scenario {
    use super::*;

    /// `p1` enters the CS and stays there; `p2` crashes right after its FAS,
    /// abandons its node and enters the CS alongside `p1`.
    pub fn crash_after_fas(lock: ObjId) -> Vec<Directive> {
        vec![
            Directive::RunUntil { pid: 1, marker: MarkerKind::CsBegin, lock, max_steps: 1000 },
            Directive::RunUntilSensitive { pid: 2, lock, max_steps: 1000 },
            Directive::Crash(2),
            Directive::RunUntil { pid: 2, marker: MarkerKind::CsBegin, lock, max_steps: 1000 },
        ]
    }

    /// Drives `p_k` down to level `k` for `k = 1..=x` in the recursive lock.
    ///
    /// `p1` takes the fast path of level 1 and parks in the CS. Every later
    /// `p_k` crashes right after its FAS in the filters of levels `1..k`, one
    /// after the other; each abandoned node lets it into that filter's CS next
    /// to the processes already there, where the splitter sends it on. It ends
    /// up on the fast path of level `k`. The total number of failures is
    /// `x(x - 1) / 2`.
    pub fn escalation(topology: &Topology, x: u32) -> Vec<Directive> {
        let target = topology.target.expect("target lock");
        let filters: Vec<ObjId> = topology.filters().iter().map(|l| l.id).collect();
        let arbs: Vec<ObjId> = {
            let mut v: Vec<_> = topology
                .locks
                .iter()
                .filter(|l| l.kind == LockKind::Arbitrator && l.name.starts_with("arbitrator["))
                .collect();
            v.sort_by_key(|l| l.level);
            v.iter().map(|l| l.id).collect()
        };
        assert!(x as usize <= filters.len(), "escalation to level {x} needs {x} levels");
        assert!(x as usize <= topology.n, "escalation to level {x} needs {x} processes");
        let mut s = vec![Directive::RunUntil { pid: 1, marker: MarkerKind::CsBegin, lock: target, max_steps: 10_000 }];
        for k in 2..=x as usize {
            for &f in &filters[..k - 1] {
                s.push(Directive::RunUntilSensitive { pid: k, lock: f, max_steps: 10_000 });
                s.push(Directive::Crash(k));
            }
            s.push(Directive::RunUntil { pid: k, marker: MarkerKind::CsBegin, lock: arbs[k - 1], max_steps: 10_000 });
        }
        s
    }
}

/// Convenience: build and run one spec under a scheduler.
pub fn run_spec(
    spec: &SystemSpec,
    sched: &mut dyn Scheduler,
    limits: Limits,
) -> Result<(Built, History, RuntimeMonitor), RunError> {
    let mut built = spec.build().map_err(|e| RunError::Invariant {
        seq: 0,
        message: e.to_string(),
        history: Box::default(),
    })?;
    let (h, mon) = built.run(sched, limits)?;
    Ok((built, h, mon))
}

/// Events of one process, in order.
pub fn events_of(h: &History, pid: usize) -> impl Iterator<Item = &Event> {
    h.events.iter().filter(move |e| e.pid == pid)
}

#[cfg(test)]
mod tests;
