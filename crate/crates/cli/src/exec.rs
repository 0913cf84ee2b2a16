use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rmelab::checker::{check_history, metrics, Analysis, MetricsRow, Report, CSV_COLUMNS};
use rmelab::lab::{scenario, SystemSpec};
use rmelab::{History, Limits, SchedulerSpec};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Scenario};

/// Sidecar stored next to every history: enough to rebuild and re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run: String,
    pub spec: SystemSpec,
    pub scheduler: SchedulerSpec,
    pub limits: Limits,
}

impl RunMeta {
    /// One run per seed, or a single scripted run for a scenario.
    pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<RunMeta>> {
        let spec = cfg.system_spec()?;
        let label = spec.lock.label();
        let limits = cfg.limits();
        if let Some(sc) = cfg.scenario {
            let built = spec.build()?;
            let script = match sc {
                Scenario::CrashAfterFas => scenario::crash_after_fas(built.target),
                Scenario::Escalation => {
                    let x = cfg.escalation_level.or(cfg.levels()).expect("validated");
                    scenario::escalation(&built.topology, x)
                }
            };
            let name = serde_json::to_value(sc)?.as_str().unwrap_or("scenario").to_string();
            let run = format!("{label}-n{}-{name}", spec.n);
            return Ok(vec![RunMeta { run, spec, scheduler: SchedulerSpec::Adversary { script }, limits }]);
        }
        Ok((cfg.seed_start..cfg.seed_start + cfg.seeds)
            .map(|seed| {
                let scheduler = match cfg.scheduler {
                    crate::config::SchedulerArg::Random => SchedulerSpec::SeededRandom(cfg.random_config(seed)),
                    crate::config::SchedulerArg::RoundRobin => SchedulerSpec::RoundRobin,
                };
                RunMeta { run: format!("{label}-n{}-s{seed}", spec.n), spec: spec.clone(), scheduler, limits }
            })
            .collect())
    }

    pub fn read(path: &Path) -> Result<RunMeta> {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        serde_json::from_reader(BufReader::new(f)).with_context(|| format!("cannot parse {}", path.display()))
    }

    /// Sidecar path for a history file: `x.jsonl` becomes `x.meta.json`.
    pub fn path_for(history: &Path) -> PathBuf {
        history.with_extension("meta.json")
    }
}

/// Result of executing (or re-checking) one history.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub run: String,
    pub history: History,
    /// A run-time failure: monitor invariant, simulation fault or step limit.
    pub run_error: Option<String>,
    pub report: Result<Report, String>,
    pub rows: Vec<MetricsRow>,
}

impl Outcome {
    pub fn clean(&self) -> bool {
        self.run_error.is_none() && self.report.as_ref().is_ok_and(Report::clean)
    }

    pub fn verdict_json(&self) -> serde_json::Value {
        serde_json::json!({
            "run": self.run,
            "clean": self.clean(),
            "events": self.history.events.len(),
            "run_error": self.run_error,
            "report": match &self.report {
                Ok(r) => serde_json::to_value(r).expect("report serializes"),
                Err(e) => serde_json::json!({ "error": e }),
            },
        })
    }
}

/// Runs the system described by `meta` and checks the resulting history.
pub fn execute(meta: &RunMeta) -> Result<Outcome> {
    let mut built = meta.spec.build()?;
    let mut sched = meta
        .scheduler
        .build(meta.spec.n, Some(built.target))
        .ok_or_else(|| anyhow!("scheduler {:?} cannot drive a single run", meta.scheduler))?;
    let (history, run_error) = match built.run(sched.as_mut(), meta.limits) {
        Ok((h, _)) => (h, None),
        Err(e) => (e.history().clone(), Some(e.to_string())),
    };
    let mut out = analyse(&meta.run, history, &meta.spec)?;
    out.run_error = run_error;
    Ok(out)
}

/// Checks an existing history against the topology of `spec`.
pub fn analyse(run: &str, history: History, spec: &SystemSpec) -> Result<Outcome> {
    let built = spec.build()?;
    let report = check_history(&history, &built.topology).map_err(|e| e.to_string());
    let rows = match &report {
        Ok(_) => Analysis::new(&history, built.target)
            .map(|a| metrics(&history, &built.topology, &a, run))
            .unwrap_or_default(),
        Err(_) => Vec::new(),
    };
    Ok(Outcome { run: run.to_string(), history, run_error: None, report, rows })
}

pub fn write_history(dir: &Path, meta: &RunMeta, h: &History) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(format!("{}.jsonl", meta.run));
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    h.write_jsonl(BufWriter::new(f))?;
    let meta_path = RunMeta::path_for(&path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(meta)?)
        .with_context(|| format!("cannot write {}", meta_path.display()))?;
    Ok(path)
}

pub fn read_history(path: &Path) -> Result<History> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    History::read_jsonl(BufReader::new(f)).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn write_metrics<'a>(path: &Path, rows: impl IntoIterator<Item = &'a MetricsRow>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LockKindArg;

    #[test]
    fn metrics_csv_round_trips_with_the_frozen_header() {
        let mut cfg = ExperimentConfig::default();
        cfg.crash.probability = 0.05;
        cfg.requests = 2;
        let meta = &RunMeta::plan(&cfg).unwrap()[0];
        let out = execute(meta).unwrap();
        assert!(out.clean() && !out.rows.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&path, &out.rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(read_metrics(&path).unwrap(), out.rows);
    }

    #[test]
    fn saved_runs_replay_identically() {
        let mut cfg = ExperimentConfig::default();
        cfg.lock.kind = LockKindArg::Semi;
        cfg.crash.probability = 0.05;
        cfg.seeds = 3;
        let dir = tempfile::tempdir().unwrap();
        for meta in RunMeta::plan(&cfg).unwrap() {
            let a = execute(&meta).unwrap();
            let path = write_history(dir.path(), &meta, &a.history).unwrap();
            let back = RunMeta::read(&RunMeta::path_for(&path)).unwrap();
            assert_eq!(back, meta);
            let b = execute(&back).unwrap();
            assert_eq!(read_history(&path).unwrap(), b.history);
            assert_eq!(a.verdict_json(), b.verdict_json());
        }
    }

    #[test]
    fn crash_after_fas_yields_an_unsafe_failure() {
        let mut cfg = ExperimentConfig::default();
        cfg.lock.kind = LockKindArg::Wr;
        cfg.scenario = Some(Scenario::CrashAfterFas);
        cfg.validate().unwrap();
        let plan = RunMeta::plan(&cfg).unwrap();
        assert_eq!(plan.len(), 1);
        let out = execute(&plan[0]).unwrap();
        let r = out.report.as_ref().unwrap();
        assert!(r.unsafe_failures >= 1 && !r.me.is_empty(), "{}", r.to_json());
        assert!(out.clean());
    }
}
