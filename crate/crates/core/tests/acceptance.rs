//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;

use rmelab::broadcast::{self, BroadcastKind, BroadcastMonitor, OpKind, ReadProgram};
use rmelab::checker::{
    adaptive_envelope, check_history, explore, metrics, shapes, Analysis, BroadcastPathMonitor, ExploreConfig,
    LockMonitor, MetricsRow,
};
use rmelab::lab::{scenario, Built, LockSpec, SystemSpec};
use rmelab::{
    run, Adversary, EventKind, History, Limits, MarkerKind, Memory, ObjId, ObjectTable, RandomConfig, RmrModel,
    RoundRobin, SeededRandom, System,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Builds `spec` and runs it under a seeded random schedule whose crash
/// budget is counted per super-passage of the target lock.
fn random_run(spec: &SystemSpec, cfg: RandomConfig) -> Result<(Built, History), String> {
    let mut built = spec.build().map_err(|e| e.to_string())?;
    let mut sch = SeededRandom::new(cfg, spec.n, Some(built.target));
    let (h, _) = built.run(&mut sch, Limits::default()).map_err(|e| format!("{}: {e}", spec.lock.label()))?;
    Ok((built, h))
}

fn rows_of(built: &Built, h: &History) -> Vec<MetricsRow> {
    let a = Analysis::new(h, built.target).expect("well-formed history");
    metrics(h, &built.topology, &a, "")
}

/// 1. Exhaustive safety of the strongly recoverable locks.
fn exhaustive_safety() -> Outcome {
    const N3_STATE_CAP: usize = 3_000_000;
    let cases = [
        (2, LockSpec::Arbitrator),
        (2, LockSpec::Tournament),
        (2, LockSpec::Semi { reclaim: None }),
        (2, LockSpec::super_adaptive(2)),
        (3, LockSpec::Tournament),
        (3, LockSpec::Semi { reclaim: None }),
        (3, LockSpec::super_adaptive(2)),
    ];
    let results: Vec<_> = cases
        .par_iter()
        .map(|(n, lock)| {
            let built = SystemSpec::new(*n, lock.clone(), RmrModel::cc()).requests(2).build().unwrap();
            let cap = if *n == 3 { N3_STATE_CAP } else { 0 };
            let cfg = ExploreConfig { max_depth: 50, crash_budget: 2, memo: true, max_states: cap };
            (*n, lock.label(), explore(&built.system, LockMonitor::new(&built.topology), cfg))
        })
        .collect();
    let mut notes = Vec::new();
    for (n, label, r) in results {
        if let Some(v) = r.violation {
            return Err(format!("{label} n={n}: {} after {:?}", v.message, v.path));
        }
        let scope = if r.truncated { "partial" } else { "complete" };
        notes.push(format!("{label} n={n} {} states {scope}", r.states));
    }
    Ok(notes.join("; "))
}

/// 2. Responsiveness of the WR-Lock.
fn responsiveness() -> Outcome {
    let outcomes: Vec<Result<(usize, usize), String>> = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            let n = 2 + (seed % 7) as usize;
            let crash = 0.005 * (1 + seed % 10) as f64;
            let model = if seed % 2 == 0 { RmrModel::cc() } else { RmrModel::dsm() };
            let spec = SystemSpec::new(n, LockSpec::wr(), model).requests(3);
            let cfg = RandomConfig { seed, crash_probability: crash, ..Default::default() };
            let (built, h) = random_run(&spec, cfg)?;
            let r = check_history(&h, &built.topology).map_err(|e| e.to_string())?;
            ensure(r.responsiveness.is_empty(), || format!("seed {seed} n={n}: {:?}", r.responsiveness[0]))?;
            Ok((r.failures, r.unsafe_failures))
        })
        .collect();
    let mut failures = 0;
    let mut unsafe_failures = 0;
    for o in outcomes {
        let (f, u) = o?;
        failures += f;
        unsafe_failures += u;
    }
    let built = SystemSpec::new(2, LockSpec::wr(), RmrModel::cc()).requests(2).build().unwrap();
    let r = explore(&built.system, LockMonitor::new(&built.topology), ExploreConfig::default());
    if let Some(v) = r.violation {
        return Err(format!("exhaustive n=2: {} after {:?}", v.message, v.path));
    }
    Ok(format!(
        "10000 runs, {failures} failures ({unsafe_failures} unsafe); exhaustive n=2 {} states",
        r.states
    ))
}

/// 3. The failure-free passage cost of the recursive lock does not depend on n.
fn failure_free_constant() -> Outcome {
    let mut notes = Vec::new();
    for model in [RmrModel::cc(), RmrModel::dsm()] {
        let mut per_n = BTreeMap::new();
        for n in [2usize, 4, 8, 16] {
            let spec = SystemSpec::new(n, LockSpec::Super { levels: None, reclaim: None }, model).requests(3);
            let max = (0..300u64)
                .into_par_iter()
                .map(|seed| {
                    let (built, h) = random_run(&spec, RandomConfig { seed, ..Default::default() }).unwrap();
                    rows_of(&built, &h).iter().filter(|r| r.failure_free).map(|r| r.rmr).max().unwrap_or(0)
                })
                .max()
                .unwrap_or(0);
            let mut built = spec.build().unwrap();
            let (h, _) = built.run(&mut RoundRobin::default(), Limits::default()).unwrap();
            let rr = rows_of(&built, &h).iter().map(|r| r.rmr).max().unwrap_or(0);
            per_n.insert(n, max.max(rr));
        }
        let values: Vec<u64> = per_n.values().copied().collect();
        ensure(values.windows(2).all(|w| w[0] == w[1]), || format!("{:?}: max RMR by n {per_n:?}", model.kind))?;
        notes.push(format!("{:?} {}", model.kind, values[0]));
    }
    Ok(notes.join(", "))
}

/// 4. Scripted escalation to level x costs x(x-1)/2 failures and x-way contention.
fn escalation() -> Outcome {
    let mut notes = Vec::new();
    for x in 1..=4u32 {
        let spec = SystemSpec::new(4, LockSpec::super_adaptive(4), RmrModel::cc());
        let mut built = spec.build().unwrap();
        let mut adv = Adversary::new(scenario::escalation(&built.topology, x));
        let (h, _) = built.run(&mut adv, Limits::default()).map_err(|e| e.to_string())?;
        ensure(adv.diverged().is_empty(), || format!("x={x}: script diverged at {:?}", adv.diverged()))?;
        let rows = rows_of(&built, &h);
        let deep: Vec<&MetricsRow> = rows.iter().filter(|r| r.level == x).collect();
        ensure(!deep.is_empty(), || format!("x={x}: no passage reached level {x}"))?;
        for r in rows.iter().filter(|r| r.level >= x) {
            let need = (x * (x - 1) / 2) as usize;
            ensure(r.failure_density >= need && r.point_contention >= x as usize, || {
                format!("x={x}: p{} at level {} has F={} c={}", r.pid, r.level, r.failure_density, r.point_contention)
            })?;
        }
        let r = deep[0];
        notes.push(format!("x={x}: F={} c={}", r.failure_density, r.point_contention));
    }
    Ok(notes.join(", "))
}

/// 5. Every passage stays within C times the adaptive envelope.
fn adaptive_envelope_sweep() -> Outcome {
    let grid: Vec<(usize, u64, f64)> = [4usize, 8, 16]
        .iter()
        .flat_map(|&n| {
            [0.0, 0.01, 0.03, 0.06, 0.1, 0.15]
                .iter()
                .flat_map(move |&p| (0..150u64).map(move |seed| (n, seed, p)))
        })
        .collect();
    let mut notes = Vec::new();
    for model in [RmrModel::cc(), RmrModel::dsm()] {
        let rows: Vec<MetricsRow> = grid
            .par_iter()
            .flat_map_iter(|&(n, seed, p)| {
                let spec = SystemSpec::new(n, LockSpec::Super { levels: None, reclaim: None }, model).requests(4);
                let cfg = RandomConfig {
                    seed,
                    crash_probability: p,
                    sensitive_crash_probability: (4.0 * p).min(1.0),
                    crash_budget_per_superpassage: 4,
                    ..Default::default()
                };
                let (built, h) = random_run(&spec, cfg).unwrap();
                rows_of(&built, &h).into_iter().filter(|r| r.failure_density <= 12)
            })
            .collect();
        let c = rows
            .iter()
            .filter(|r| r.n == 4 && r.failure_density == 0)
            .map(|r| r.rmr as f64 / adaptive_envelope(r))
            .fold(0.0, f64::max);
        let mut covered: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for r in &rows {
            let e = covered.entry((r.n, r.failure_density)).or_default();
            *e = (*e).max(r.rmr);
        }
        let bad: Vec<&MetricsRow> = rows.iter().filter(|r| r.rmr as f64 > c * adaptive_envelope(r) + 1e-9).collect();
        ensure(bad.is_empty(), || {
            let r = bad[0];
            format!(
                "{:?} C={c:.2}: {} passages over the envelope, e.g. n={} F={} c={} level {} rmr {} > {:.1}",
                model.kind,
                bad.len(),
                r.n,
                r.failure_density,
                r.point_contention,
                r.level,
                r.rmr,
                c * adaptive_envelope(r)
            )
        })?;
        let missing: Vec<(usize, usize)> = [4usize, 8, 16]
            .iter()
            .flat_map(|&n| (0..=12).map(move |f| (n, f)))
            .filter(|k| !covered.contains_key(k))
            .collect();
        notes.push(format!(
            "{:?} C={c:.2} over {} passages, {} of 39 cells covered{}",
            model.kind,
            rows.len(),
            39 - missing.len(),
            if missing.is_empty() { String::new() } else { format!(" (missing {missing:?})") }
        ));
    }
    Ok(notes.join("; "))
}

/// 6. Broadcast object: exhaustive safety and liveness, constant RMR costs.
fn broadcast_object() -> Outcome {
    let reports: Vec<_> = [1usize, 2, 3]
        .par_iter()
        .map(|&owner| {
            let (sys, object) = broadcast::harness(3, owner, 2, BroadcastKind::Dsm, RmrModel::dsm()).unwrap();
            let mon = BroadcastPathMonitor::new(BroadcastMonitor::new(object, 3), owner);
            let cfg = ExploreConfig { max_depth: 60, crash_budget: 1, memo: true, max_states: 0 };
            (owner, explore(&sys, mon, cfg))
        })
        .collect();
    let mut states = 0;
    for (owner, r) in reports {
        if let Some(v) = r.violation {
            return Err(format!("owner p{owner}: {} after {:?}", v.message, v.path));
        }
        ensure(!r.truncated, || format!("owner p{owner}: search truncated"))?;
        states += r.states;
    }
    let mut costs = BTreeMap::new();
    for n in [2usize, 3, 4, 8, 16] {
        let mut read = 0;
        let mut wait = 0;
        let mut quiet_set = 0;
        let mut mem = Memory::new(n, RmrModel::dsm());
        let mut table = ObjectTable::new();
        let object = table.add(Box::new(broadcast::BroadcastDsm::new(&mut mem, 1).unwrap()));
        let prog = table.add(Box::new(ReadProgram { object }));
        let mut sys = System::new(table.freeze(), mem, &vec![(prog, 2); n]);
        let h = run(&mut sys, &mut RoundRobin::default(), Limits::default()).unwrap();
        for p in 1..=n {
            read = read.max(h.events.iter().filter(|e| e.pid == p && e.rmr).count() as u64 / 2);
        }
        for seed in 0..300 {
            let (mut sys, object) = broadcast::harness(n, 1, 3, BroadcastKind::Dsm, RmrModel::dsm()).unwrap();
            let mut sch = SeededRandom::new(RandomConfig { seed, ..Default::default() }, n, None);
            let h = run(&mut sys, &mut sch, Limits::default()).unwrap();
            for c in broadcast::op_costs(&h, object) {
                match c.kind {
                    OpKind::Wait => wait = wait.max(c.rmr),
                    OpKind::Set if c.churn_free => quiet_set = quiet_set.max(c.rmr),
                    OpKind::Set => {}
                }
            }
        }
        costs.insert(n, (read, wait, quiet_set));
    }
    let big: Vec<_> = costs.range(3..).map(|(_, c)| *c).collect();
    ensure(big.windows(2).all(|w| w[0] == w[1]), || format!("costs (read, wait, churn-free set) by n: {costs:?}"))?;
    let (r, w, s) = big[0];
    let (r2, w2, s2) = costs[&2];
    ensure(r2 <= r && w2 <= w && s2 <= s, || format!("n=2 costs exceed the rest: {costs:?}"))?;
    Ok(format!("{states} states over 3 owners; read {r}, wait {w}, churn-free set {s} RMRs for every n"))
}

/// 7. Memory reclamation soak.
fn reclamation_soak() -> Outcome {
    let mut notes = Vec::new();
    for kind in [BroadcastKind::Dsm, BroadcastKind::Cc] {
        let spec = SystemSpec::new(4, LockSpec::Wr { reclaim: Some(kind) }, RmrModel::dsm()).requests(25);
        let results: Vec<Result<(usize, usize, usize), String>> = (0..110u64)
            .into_par_iter()
            .map(|seed| {
                let mut built = spec.build().map_err(|e| e.to_string())?;
                let cfg = RandomConfig { seed, crash_probability: 0.02, ..Default::default() };
                let mut sch = SeededRandom::new(cfg, 4, Some(built.target));
                let (h, mon) = built.run(&mut sch, Limits::default()).map_err(|e| format!("seed {seed}: {e}"))?;
                let passages = h
                    .events
                    .iter()
                    .filter(|e| e.kind == EventKind::Marker { marker: MarkerKind::RecoverBegin, lock: built.target })
                    .count();
                let crashes = h.events.iter().filter(|e| matches!(e.kind, EventKind::Crash { .. })).count();
                Ok((passages, crashes, mon.max_live_nodes))
            })
            .collect();
        let (mut passages, mut crashes, mut live) = (0, 0, 0);
        for r in results {
            let (p, c, l) = r?;
            passages += p;
            crashes += c;
            live = live.max(l);
        }
        ensure(passages >= 10_000, || format!("{kind:?}: only {passages} passages"))?;
        notes.push(format!("{kind:?} {passages} passages, {crashes} crashes, max live nodes {live} of {}", 2 * 4 * 14));
    }
    Ok(notes.join("; "))
}

/// 8. Fairness of the WR-Lock and the recursive lock, and the three shapes.
fn fairness() -> Outcome {
    let l = ObjId(0);
    let (sps, pid) = shapes::one_fc_not_ci();
    let a = shapes::classify_last(l, &sps, pid);
    ensure(a == (Some(1), false), || format!("1FC-not-CI shape classified {a:?}"))?;
    let (sps, pid) = shapes::ci_not_one_fc();
    let b = shapes::classify_last(l, &sps, pid);
    ensure(b.1 && b.0 != Some(1) && b.0 != Some(0), || format!("CI-not-1FC shape classified {b:?}"))?;
    let (sps, pid) = shapes::two_fc_not_ci();
    let c = shapes::classify_last(l, &sps, pid);
    ensure(c == (Some(2), false), || format!("2FC-not-CI shape classified {c:?}"))?;

    let mut notes = vec![format!("shapes {a:?} {b:?} {c:?}")];
    for lock in [LockSpec::wr(), LockSpec::Super { levels: None, reclaim: None }] {
        let outcomes: Vec<Result<usize, String>> = (0..3_000u64)
            .into_par_iter()
            .map(|seed| {
                let n = 2 + (seed % 7) as usize;
                let spec = SystemSpec::new(n, lock.clone(), RmrModel::cc()).requests(3);
                let cfg = RandomConfig { seed, crash_probability: 0.01 * (1 + seed % 5) as f64, ..Default::default() };
                let (built, h) = random_run(&spec, cfg)?;
                let r = check_history(&h, &built.topology).map_err(|e| e.to_string())?;
                ensure(r.ci_fcfs == 0 && r.fcfs_1 == 0, || {
                    format!("{} seed {seed}: {} CI-FCFS, {} 1-FCFS violations", lock.label(), r.ci_fcfs, r.fcfs_1)
                })?;
                ensure(r.fcfs_2 == 0, || format!("{} seed {seed}: CI-FCFS held but 2-FCFS did not", lock.label()))?;
                Ok(r.failures)
            })
            .collect();
        let mut failures = 0;
        for o in outcomes {
            failures += o?;
        }
        notes.push(format!("{} 3000 runs ({failures} failures)", lock.label()));
    }
    Ok(notes.join("; "))
}

/// 9. Serialized histories replay to byte-identical verdicts.
fn replay() -> Outcome {
    let dir = std::env::temp_dir().join(format!("rmelab-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let locks = [
        LockSpec::wr(),
        LockSpec::Wr { reclaim: Some(BroadcastKind::Dsm) },
        LockSpec::Tournament,
        LockSpec::Semi { reclaim: None },
        LockSpec::super_adaptive(2),
    ];
    let mut count = 0;
    for lock in &locks {
        for seed in 0..40u64 {
            let spec = SystemSpec::new(4, lock.clone(), RmrModel::dsm()).requests(3);
            let cfg = RandomConfig { seed, crash_probability: 0.04, ..Default::default() };
            let (built, h) = random_run(&spec, cfg)?;
            let path = dir.join(format!("{}-{seed}.jsonl", lock.label()));
            h.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| e.to_string())?))
                .map_err(|e| e.to_string())?;
            let file = std::fs::File::open(&path).map_err(|e| e.to_string())?;
            let back = History::read_jsonl(std::io::BufReader::new(file)).map_err(|e| e.to_string())?;
            let first = check_history(&h, &built.topology).map_err(|e| e.to_string())?.to_json();
            let again = check_history(&back, &built.topology).map_err(|e| e.to_string())?.to_json();
            ensure(back == h, || format!("{} seed {seed}: history changed on reload", lock.label()))?;
            ensure(first == again, || format!("{} seed {seed}: verdict changed on reload", lock.label()))?;
            let rerun = random_run(&spec, RandomConfig { seed, crash_probability: 0.04, ..Default::default() })?.1;
            ensure(rerun == h, || format!("{} seed {seed}: rerun differs", lock.label()))?;
            count += 1;
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("{count} histories"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "exhaustive safety", exhaustive_safety),
        (2, "responsiveness", responsiveness),
        (3, "failure-free constant cost", failure_free_constant),
        (4, "escalation", escalation),
        (5, "adaptive envelope", adaptive_envelope_sweep),
        (6, "broadcast", broadcast_object),
        (7, "reclamation soak", reclamation_soak),
        (8, "fairness", fairness),
        (9, "replay determinism", replay),
    ];
    let results: Vec<(u32, &str, Outcome, f64)> = criteria
        .par_iter()
        .map(|&(i, name, f)| {
            let t = Instant::now();
            let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
            (i, name, r, t.elapsed().as_secs_f64())
        })
        .collect();
    let mut failed = 0;
    for (i, name, r, secs) in results {
        match r {
            Ok(detail) => println!("criterion {i} ({name}): PASS in {secs:.1}s: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {i} ({name}): FAIL in {secs:.1}s: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
