use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::event::{Event, EventKind, History, MarkerKind, ObjId};
use super::memory::Pid;
use super::system::{Choice, ProcStatus, System};
use super::SimError;

pub trait Scheduler {
    /// Next decision, or `None` if nothing is runnable.
    fn choose(&mut self, sys: &System) -> Option<Choice>;

    /// Called with the events produced by the last decision.
    fn observe(&mut self, _events: &[Event]) {}
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomConfig {
    pub seed: u64,
    /// Probability that a chosen live process is crashed instead of stepped.
    pub crash_probability: f64,
    /// Crash probability used instead when the process sits in a sensitive window.
    pub sensitive_crash_probability: f64,
    /// Never crash inside a sensitive window.
    pub avoid_sensitive: bool,
    pub crash_budget_per_superpassage: u32,
    /// K: a live process waits at most K·n decisions before it is forced.
    pub fairness_window: u32,
    /// Restrict crash injection to these processes (all when empty).
    pub crashable: Vec<Pid>,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig {
            seed: 0,
            crash_probability: 0.0,
            sensitive_crash_probability: 0.0,
            avoid_sensitive: false,
            crash_budget_per_superpassage: 2,
            fairness_window: 8,
            crashable: Vec::new(),
        }
    }
}

/// Tracks crashes per super-passage of each process for a given top-level lock.
/// A super-passage ends at the lock's ExitEnd; without a lock the budget is per run.
#[derive(Clone, Debug)]
struct Budget {
    top: Option<ObjId>,
    used: Vec<u32>,
}

impl Budget {
    fn observe(&mut self, events: &[Event]) {
        for e in events {
            match &e.kind {
                EventKind::Crash { .. } => self.used[e.pid] += 1,
                EventKind::Marker { marker: MarkerKind::ExitEnd, lock } if Some(*lock) == self.top => {
                    self.used[e.pid] = 0
                }
                _ => {}
            }
        }
    }
}

pub struct SeededRandom {
    cfg: RandomConfig,
    rng: ChaCha8Rng,
    waited: Vec<u64>,
    budget: Budget,
}

impl SeededRandom {
    pub fn new(cfg: RandomConfig, n: usize, top: Option<ObjId>) -> Self {
        assert!(cfg.fairness_window >= 2, "fairness window must be at least 2");
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        SeededRandom { cfg, rng, waited: vec![0; n + 1], budget: Budget { top, used: vec![0; n + 1] } }
    }
}

impl Scheduler for SeededRandom {
    fn choose(&mut self, sys: &System) -> Option<Choice> {
        let n = sys.n();
        let cands: Vec<Pid> = (1..=n).filter(|&p| sys.runnable(p)).collect();
        if cands.is_empty() {
            return None;
        }
        let threshold = (self.cfg.fairness_window as u64 - 1) * n as u64;
        let starving = cands.iter().copied().filter(|&p| self.waited[p] >= threshold).max_by_key(|&p| {
            // Longest wait first, lowest pid on ties.
            (self.waited[p], std::cmp::Reverse(p))
        });
        let pid = match starving {
            Some(p) => p,
            None => cands[self.rng.gen_range(0..cands.len())],
        };
        for &p in &cands {
            self.waited[p] += 1;
        }
        self.waited[pid] = 0;

        let may_crash = sys.status(pid) == ProcStatus::Running
            && self.budget.used[pid] < self.cfg.crash_budget_per_superpassage
            && (self.cfg.crashable.is_empty() || self.cfg.crashable.contains(&pid));
        if may_crash {
            let sensitive = !sys.sensitive_locks(pid).is_empty();
            let p = if sensitive {
                if self.cfg.avoid_sensitive {
                    0.0
                } else {
                    self.cfg.crash_probability.max(self.cfg.sensitive_crash_probability)
                }
            } else {
                self.cfg.crash_probability
            };
            if p > 0.0 && self.rng.gen_bool(p.min(1.0)) {
                return Some(Choice::Crash(pid));
            }
        }
        Some(Choice::Step(pid))
    }

    fn observe(&mut self, events: &[Event]) {
        self.budget.observe(events);
    }
}

/// Cycles through runnable processes in id order, never crashing.
#[derive(Clone, Debug, Default)]
pub struct RoundRobin {
    last: Pid,
}

impl Scheduler for RoundRobin {
    fn choose(&mut self, sys: &System) -> Option<Choice> {
        let n = sys.n();
        for k in 1..=n {
            let p = (self.last + k - 1) % n + 1;
            if sys.runnable(p) {
                self.last = p;
                return Some(Choice::Step(p));
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Directive {
    Step(Pid),
    Crash(Pid),
    /// Step `pid` until it emits `marker` for `lock`.
    RunUntil { pid: Pid, marker: MarkerKind, lock: ObjId, max_steps: u32 },
    /// Step `pid` until a crash would be unsafe for `lock`.
    RunUntilSensitive { pid: Pid, lock: ObjId, max_steps: u32 },
    /// Step `pid` until it parks.
    RunSolo { pid: Pid, max_steps: u32 },
}

/// Replays a fixed script, then finishes the run failure-free in round-robin order.
#[derive(Clone, Debug)]
pub struct Adversary {
    script: Vec<Directive>,
    idx: usize,
    spent: u32,
    hit: bool,
    diverged: Vec<usize>,
    tail: RoundRobin,
}

impl Adversary {
    pub fn new(script: Vec<Directive>) -> Self {
        Adversary { script, idx: 0, spent: 0, hit: false, diverged: Vec::new(), tail: RoundRobin::default() }
    }

    /// Indices of directives whose goal was not reached within their step allowance.
    pub fn diverged(&self) -> &[usize] {
        &self.diverged
    }

    pub fn finished_script(&self) -> bool {
        self.idx >= self.script.len()
    }

    fn advance(&mut self, ok: bool) {
        if !ok {
            self.diverged.push(self.idx);
        }
        self.idx += 1;
        self.spent = 0;
        self.hit = false;
    }
}

impl Scheduler for Adversary {
    fn choose(&mut self, sys: &System) -> Option<Choice> {
        while let Some(d) = self.script.get(self.idx).cloned() {
            match d {
                Directive::Step(p) => {
                    self.advance(true);
                    if sys.runnable(p) {
                        return Some(Choice::Step(p));
                    }
                    self.diverged.push(self.idx - 1);
                }
                Directive::Crash(p) => {
                    self.advance(true);
                    if sys.status(p) != ProcStatus::Crashed {
                        return Some(Choice::Crash(p));
                    }
                    self.diverged.push(self.idx - 1);
                }
                Directive::RunUntil { pid, max_steps, .. } => {
                    if self.hit {
                        self.advance(true);
                    } else if self.spent >= max_steps || !sys.runnable(pid) {
                        self.advance(false);
                    } else {
                        self.spent += 1;
                        return Some(Choice::Step(pid));
                    }
                }
                Directive::RunUntilSensitive { pid, lock, max_steps } => {
                    if sys.status(pid) == ProcStatus::Running && sys.sensitive_locks(pid).contains(&lock) {
                        self.advance(true);
                    } else if self.spent >= max_steps || !sys.runnable(pid) {
                        self.advance(false);
                    } else {
                        self.spent += 1;
                        return Some(Choice::Step(pid));
                    }
                }
                Directive::RunSolo { pid, max_steps } => {
                    if sys.status(pid) == ProcStatus::Parked {
                        self.advance(true);
                    } else if self.spent >= max_steps {
                        self.advance(false);
                    } else {
                        self.spent += 1;
                        return Some(Choice::Step(pid));
                    }
                }
            }
        }
        self.tail.choose(sys)
    }

    fn observe(&mut self, events: &[Event]) {
        if let Some(Directive::RunUntil { pid, marker, lock, .. }) = self.script.get(self.idx) {
            let seen = events
                .iter()
                .any(|e| e.pid == *pid && e.kind == EventKind::Marker { marker: *marker, lock: *lock });
            self.hit |= seen;
        }
    }
}

/// Serializable description of a scheduler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SchedulerSpec {
    SeededRandom(RandomConfig),
    Adversary { script: Vec<Directive> },
    RoundRobin,
    /// Exhaustive search is driven by the checker's explorer, not by `run`.
    ExhaustiveDfs { max_depth: u32, crash_budget: u32 },
}

impl SchedulerSpec {
    pub fn build(&self, n: usize, top: Option<ObjId>) -> Option<Box<dyn Scheduler>> {
        match self {
            SchedulerSpec::SeededRandom(cfg) => Some(Box::new(SeededRandom::new(cfg.clone(), n, top))),
            SchedulerSpec::Adversary { script } => Some(Box::new(Adversary::new(script.clone()))),
            SchedulerSpec::RoundRobin => Some(Box::new(RoundRobin::default())),
            SchedulerSpec::ExhaustiveDfs { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    /// Maximum number of scheduling decisions.
    pub max_steps: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_steps: 1_000_000 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("step limit exceeded after {} events", .0.len())]
    LimitExceeded(Box<History>),
    #[error("simulation fault: {error}")]
    Fault { error: SimError, history: Box<History> },
    #[error("invariant violated at seq {seq}: {message}")]
    Invariant { seq: u64, message: String, history: Box<History> },
}

impl RunError {
    pub fn history(&self) -> &History {
        match self {
            RunError::LimitExceeded(h) => h,
            RunError::Fault { history, .. } | RunError::Invariant { history, .. } => history,
        }
    }
}

/// Runs until every process parks or the limit is hit.
pub fn run(sys: &mut System, sched: &mut dyn Scheduler, limits: Limits) -> Result<History, RunError> {
    run_checked(sys, sched, limits, &mut |_, _| Ok(()))
}

/// Like [`run`], calling `check` after every decision with the new events.
pub fn run_checked(
    sys: &mut System,
    sched: &mut dyn Scheduler,
    limits: Limits,
    check: &mut dyn FnMut(&System, &[Event]) -> Result<(), String>,
) -> Result<History, RunError> {
    let mut events = Vec::new();
    if let Err(error) = sys.start(&mut events) {
        return Err(RunError::Fault { error, history: Box::new(History { events }) });
    }
    sched.observe(&events);
    let mut decisions = 0u64;
    loop {
        if sys.all_parked() {
            return Ok(History { events });
        }
        if decisions >= limits.max_steps {
            return Err(RunError::LimitExceeded(Box::new(History { events })));
        }
        let Some(choice) = sched.choose(sys) else {
            return Err(RunError::LimitExceeded(Box::new(History { events })));
        };
        decisions += 1;
        let from = events.len();
        if let Err(error) = sys.apply(choice, &mut events) {
            return Err(RunError::Fault { error, history: Box::new(History { events }) });
        }
        sched.observe(&events[from..]);
        if let Err(message) = check(sys, &events[from..]) {
            let seq = events.last().map(|e| e.seq).unwrap_or(0);
            return Err(RunError::Invariant { seq, message, history: Box::new(History { events }) });
        }
    }
}
