//! `rmelab`: run, check, sweep, explore and replay simulated recoverable locks.

mod config;
mod exec;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use rmelab::checker::{adaptive_envelope, explore, ExploreConfig, LockMonitor, Profile, Report};
use serde_json::json;

use config::{ConfigError, ExperimentConfig, LockKindArg, ModelArg, SchedulerArg, Scenario};
use exec::{Outcome, RunMeta};

/// Default output directory when neither `--out` nor `output.dir` is given.
const OUT_ENV: &str = "RMELAB_OUT_DIR";
const DEFAULT_OUT: &str = "rmelab-out";

#[derive(Parser, Debug)]
#[command(name = "rmelab", version, about = "Simulate and check recoverable mutual exclusion locks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation per seed (or a scripted scenario), check it and write histories and metrics.
    Run(RunArgs),
    /// Check saved histories against the lock they were recorded with.
    Check(CheckArgs),
    /// Run a grid of locks, sizes and crash rates and print the complexity profile.
    Sweep(SweepArgs),
    /// Exhaustively explore schedules and crashes of a small system.
    Explore(ExploreArgs),
    /// Re-run saved histories from their sidecars and compare events and verdicts.
    Replay(ReplayArgs),
}

/// Options describing the simulated system. Flags override the config file.
#[derive(Args, Debug, Default)]
struct SystemArgs {
    /// TOML experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Number of processes [default: 4].
    #[arg(long)]
    n: Option<usize>,
    /// Lock stack [default: super].
    #[arg(long, value_enum)]
    lock: Option<LockKindArg>,
    /// Levels of the super lock [default: ceil(log2(n + 1))].
    #[arg(long)]
    levels: Option<u32>,
    /// Recycle WR-Lock nodes through the reclamation layer.
    #[arg(long)]
    reclaim: bool,
    /// RMR model [default: cc].
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// CC only: whether a failed CAS invalidates other cached copies [default: true].
    #[arg(long)]
    failed_cas_invalidates: Option<bool>,
    /// Requests per process [default: 1].
    #[arg(long)]
    requests: Option<u32>,
    /// Local steps inside each critical section [default: 1].
    #[arg(long)]
    cs_steps: Option<u32>,
    /// Scheduling decisions before a run is abandoned [default: 1000000].
    #[arg(long)]
    max_steps: Option<u64>,
}

/// Options of the seeded random scheduler.
#[derive(Args, Debug, Default)]
struct CrashArgs {
    /// Crash probability per scheduling decision [default: 0].
    #[arg(long)]
    crash_prob: Option<f64>,
    /// Crash probability inside a sensitive window [default: --crash-prob].
    #[arg(long)]
    sensitive_crash_prob: Option<f64>,
    /// Crashes allowed per process per super-passage [default: 2].
    #[arg(long)]
    crash_budget: Option<u32>,
    /// Never crash inside a sensitive window.
    #[arg(long)]
    avoid_sensitive: bool,
    /// Only these processes may crash [default: all].
    #[arg(long, value_delimiter = ',')]
    crash_procs: Option<Vec<usize>>,
    /// Fairness window K: a live process waits at most K*n decisions [default: 8].
    #[arg(long)]
    fairness_window: Option<u32>,
    /// Number of seeds [default: 1].
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed [default: 0].
    #[arg(long)]
    seed_start: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    crash: CrashArgs,
    /// Scheduler used when no scenario is given [default: random].
    #[arg(long, value_enum)]
    scheduler: Option<SchedulerArg>,
    /// Scripted scenario instead of seeded runs.
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    /// Deepest level reached by the escalation scenario [default: number of levels].
    #[arg(long)]
    escalation_level: Option<u32>,
    /// Output directory [default: $RMELAB_OUT_DIR, else ./rmelab-out].
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Property {
    /// Mutual exclusion (hard violations only).
    Me,
    /// WR-Lock responsiveness.
    Responsiveness,
    /// Wait-free step bounds.
    Bounds,
    /// Port discipline of the arbitrators.
    Ports,
    /// Locality of memory accesses.
    Locality,
    /// No unsafe failures of strongly recoverable locks.
    Strong,
    /// CI-FCFS and 1-FCFS where the lock promises them.
    Fairness,
}

impl Property {
    fn holds(self, r: &Report) -> bool {
        match self {
            Property::Me => r.me_hard.is_empty(),
            Property::Responsiveness => r.responsiveness.is_empty(),
            Property::Bounds => r.bounds.is_empty(),
            Property::Ports => r.ports.is_empty(),
            Property::Locality => r.locality.is_empty(),
            Property::Strong => r.strong_unsafe.is_empty(),
            Property::Fairness => !r.fcfs_claimed || (r.ci_fcfs == 0 && r.fcfs_1 == 0),
        }
    }
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// History files (JSON lines) written by `run`.
    #[arg(required = true)]
    histories: Vec<PathBuf>,
    /// Sidecar describing the system [default: <history>.meta.json].
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Properties to check [default: all].
    #[arg(long, short, value_enum, value_delimiter = ',')]
    property: Vec<Property>,
    /// Also write the per-passage metrics of all histories to this CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    crash: CrashArgs,
    /// Lock stacks to compare [default: the configured lock].
    #[arg(long = "locks", value_enum, value_delimiter = ',')]
    locks: Vec<LockKindArg>,
    /// Process counts [default: 4,8,16].
    #[arg(long, value_delimiter = ',')]
    ns: Vec<usize>,
    /// Crash probabilities [default: 0,0.01,0.05].
    #[arg(long, value_delimiter = ',')]
    crash_probs: Vec<f64>,
    /// Also write every history with its sidecar.
    #[arg(long)]
    keep_histories: bool,
    /// Output directory [default: $RMELAB_OUT_DIR, else ./rmelab-out].
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExploreArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Maximum scheduling decisions per path.
    #[arg(long, default_value_t = 50)]
    depth: u32,
    /// Maximum crashes per path.
    #[arg(long, default_value_t = 2)]
    crash_budget: u32,
    /// Stop after this many expanded states (0 = unlimited).
    #[arg(long, default_value_t = 0)]
    max_states: usize,
    /// Disable state memoization.
    #[arg(long)]
    no_memo: bool,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// History files written by `run`; each needs its `.meta.json` sidecar.
    #[arg(required = true)]
    histories: Vec<PathBuf>,
}

impl SystemArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(l) = self.lock {
            if l != cfg.lock.kind {
                cfg.lock.levels = None;
            }
            cfg.lock.kind = l;
        }
        if self.levels.is_some() {
            cfg.lock.levels = self.levels;
        }
        cfg.lock.reclaim |= self.reclaim;
        if let Some(m) = self.model {
            cfg.model.kind = m;
        }
        if let Some(f) = self.failed_cas_invalidates {
            cfg.model.failed_cas_invalidates = f;
        }
        if let Some(r) = self.requests {
            cfg.requests = r;
        }
        if let Some(c) = self.cs_steps {
            cfg.cs_steps = c;
        }
        if let Some(m) = self.max_steps {
            cfg.max_steps = m;
        }
    }

    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }
}

impl CrashArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(p) = self.crash_prob {
            cfg.crash.probability = p;
        }
        if self.sensitive_crash_prob.is_some() {
            cfg.crash.sensitive_probability = self.sensitive_crash_prob;
        }
        if let Some(b) = self.crash_budget {
            cfg.crash.budget = b;
        }
        cfg.crash.avoid_sensitive |= self.avoid_sensitive;
        if let Some(p) = &self.crash_procs {
            cfg.crash.processes = p.clone();
        }
        if let Some(k) = self.fairness_window {
            cfg.fairness_window = k;
        }
        if let Some(s) = self.seeds {
            cfg.seeds = s;
        }
        if let Some(s) = self.seed_start {
            cfg.seed_start = s;
        }
    }
}

fn out_dir(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// How a command ended when it did not fail outright.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verdict {
    Clean,
    Violation,
}

impl Verdict {
    fn from_clean(clean: bool) -> Self {
        if clean {
            Verdict::Clean
        } else {
            Verdict::Violation
        }
    }
}

fn summarize(outcomes: &[Outcome]) -> serde_json::Value {
    let reports: Vec<&Report> = outcomes.iter().filter_map(|o| o.report.as_ref().ok()).collect();
    json!({
        "runs": outcomes.len(),
        "clean": outcomes.iter().filter(|o| o.clean()).count(),
        "passages": reports.iter().map(|r| r.passages).sum::<usize>(),
        "failures": reports.iter().map(|r| r.failures).sum::<usize>(),
        "unsafe_failures": reports.iter().map(|r| r.unsafe_failures).sum::<usize>(),
        "max_failure_density": reports.iter().map(|r| r.max_failure_density).max().unwrap_or(0),
        "max_rmr": outcomes.iter().flat_map(|o| &o.rows).map(|r| r.rmr).max().unwrap_or(0),
    })
}

fn cmd_run(args: &RunArgs) -> Result<Verdict> {
    let mut cfg = args.system.load()?;
    args.crash.apply(&mut cfg);
    if let Some(s) = args.scheduler {
        cfg.scheduler = s;
    }
    if args.scenario.is_some() {
        cfg.scenario = args.scenario;
    }
    if args.escalation_level.is_some() {
        cfg.escalation_level = args.escalation_level;
    }
    cfg.validate()?;
    let out = out_dir(&args.out, &cfg);
    let plan = RunMeta::plan(&cfg)?;
    let outcomes: Vec<Outcome> = plan.par_iter().map(exec::execute).collect::<Result<_>>()?;
    let hist_dir = out.join("histories");
    for (meta, o) in plan.iter().zip(&outcomes) {
        exec::write_history(&hist_dir, meta, &o.history)?;
    }
    exec::write_metrics(&out.join("metrics.csv"), outcomes.iter().flat_map(|o| &o.rows))?;
    let verdicts: Vec<_> = outcomes.iter().map(Outcome::verdict_json).collect();
    std::fs::write(out.join("verdicts.json"), serde_json::to_string_pretty(&verdicts)?)?;
    for o in outcomes.iter().filter(|o| !o.clean()) {
        eprintln!("violation in {}: {}", o.run, o.verdict_json());
    }
    let mut summary = summarize(&outcomes);
    summary["out"] = json!(out);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Verdict::from_clean(outcomes.iter().all(Outcome::clean)))
}

fn cmd_check(args: &CheckArgs) -> Result<Verdict> {
    if args.meta.is_some() && args.histories.len() > 1 {
        bail!(ConfigError::Invalid("--meta applies to a single history".into()));
    }
    let props: Vec<Property> = if args.property.is_empty() {
        Property::value_variants().to_vec()
    } else {
        args.property.clone()
    };
    let mut all_clean = true;
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    for path in &args.histories {
        let meta_path = args.meta.clone().unwrap_or_else(|| RunMeta::path_for(path));
        let meta = RunMeta::read(&meta_path)?;
        let h = exec::read_history(path)?;
        let o = exec::analyse(&meta.run, h, &meta.spec)?;
        let failed: Vec<String> = match &o.report {
            Ok(r) => props
                .iter()
                .filter(|p| !p.holds(r))
                .map(|p| p.to_possible_value().expect("no skipped variants").get_name().to_string())
                .collect(),
            Err(e) => vec![format!("history: {e}")],
        };
        all_clean &= failed.is_empty();
        let mut v = o.verdict_json();
        v["clean"] = json!(failed.is_empty());
        v["failed"] = json!(failed);
        v["history"] = json!(path);
        verdicts.push(v);
        rows.extend(o.rows);
    }
    if let Some(csv) = &args.csv {
        exec::write_metrics(csv, &rows)?;
    }
    println!("{}", serde_json::to_string_pretty(&verdicts)?);
    Ok(Verdict::from_clean(all_clean))
}

fn cmd_sweep(args: &SweepArgs) -> Result<Verdict> {
    let mut base = args.system.load()?;
    args.crash.apply(&mut base);
    if base.scenario.is_some() {
        bail!(ConfigError::Invalid("sweep runs seeded schedules; remove the scenario".into()));
    }
    let locks = if args.locks.is_empty() { vec![base.lock.kind] } else { args.locks.clone() };
    let ns = if args.ns.is_empty() { vec![4, 8, 16] } else { args.ns.clone() };
    let probs = if args.crash_probs.is_empty() { vec![0.0, 0.01, 0.05] } else { args.crash_probs.clone() };
    let mut plan = Vec::new();
    for &lock in &locks {
        for &n in &ns {
            for &p in &probs {
                let mut cfg = base.clone();
                if lock != cfg.lock.kind {
                    cfg.lock.levels = None;
                }
                cfg.lock.kind = lock;
                cfg.n = n;
                cfg.crash.probability = p;
                cfg.scheduler = SchedulerArg::Random;
                cfg.validate()?;
                for mut meta in RunMeta::plan(&cfg)? {
                    meta.run = format!("{}-p{p}", meta.run);
                    plan.push(meta);
                }
            }
        }
    }
    let out = out_dir(&args.out, &base);
    let outcomes: Vec<Outcome> = plan.par_iter().map(exec::execute).collect::<Result<_>>()?;
    if args.keep_histories {
        for (meta, o) in plan.iter().zip(&outcomes) {
            exec::write_history(&out.join("histories"), meta, &o.history)?;
        }
    }
    exec::write_metrics(&out.join("metrics.csv"), outcomes.iter().flat_map(|o| &o.rows))?;

    let mut by_lock: BTreeMap<String, Vec<&Outcome>> = BTreeMap::new();
    for (meta, o) in plan.iter().zip(&outcomes) {
        by_lock.entry(meta.spec.lock.label()).or_default().push(o);
    }
    let mut summary = serde_json::Map::new();
    for (label, os) in &by_lock {
        let mut profile = Profile::default();
        let mut ratio: f64 = 0.0;
        for o in os {
            profile.add(&o.rows);
            for r in &o.rows {
                ratio = ratio.max(r.rmr as f64 / adaptive_envelope(r));
            }
        }
        let path = out.join(format!("profile-{label}.csv"));
        std::fs::write(&path, profile.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
        println!("# {label}");
        print!("{}", profile.to_csv());
        let failure_free: Vec<_> = profile.failure_free_column();
        let entry = json!({
            "runs": os.len(),
            "clean": os.iter().filter(|o| o.clean()).count(),
            "failure_free_column": failure_free,
            "constant_when_failure_free": profile.constant_when_failure_free(),
            "non_monotone": profile.non_monotone(),
            "max_rmr": profile.cells.values().map(|c| c.max_rmr).max().unwrap_or(0),
            "max_envelope_ratio": ratio,
        });
        println!("{}\n", serde_json::to_string(&entry)?);
        summary.insert(label.clone(), entry);
    }
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    for o in outcomes.iter().filter(|o| !o.clean()) {
        eprintln!("violation in {}: {}", o.run, o.verdict_json());
    }
    Ok(Verdict::from_clean(outcomes.iter().all(Outcome::clean)))
}

fn cmd_explore(args: &ExploreArgs) -> Result<Verdict> {
    let mut cfg = args.system.load()?;
    if args.system.n.is_none() && args.system.config.is_none() {
        cfg.n = 2;
    }
    let spec = cfg.system_spec()?;
    let built = spec.build()?;
    let ecfg = ExploreConfig {
        max_depth: args.depth,
        crash_budget: args.crash_budget,
        memo: !args.no_memo,
        max_states: args.max_states,
    };
    let report = explore(&built.system, LockMonitor::new(&built.topology), ecfg);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "spec": spec, "config": ecfg, "report": report }))?
    );
    Ok(Verdict::from_clean(report.violation.is_none()))
}

fn replay_one(path: &Path) -> Result<(bool, serde_json::Value)> {
    let meta = RunMeta::read(&RunMeta::path_for(path))?;
    let saved = exec::read_history(path)?;
    let stored = exec::analyse(&meta.run, saved.clone(), &meta.spec)?;
    let fresh = exec::execute(&meta)?;
    let first_diff = saved
        .events
        .iter()
        .zip(&fresh.history.events)
        .position(|(a, b)| a != b)
        .or((saved.events.len() != fresh.history.events.len())
            .then(|| saved.events.len().min(fresh.history.events.len())));
    let same_verdict = stored.report == fresh.report;
    let identical = first_diff.is_none() && same_verdict;
    Ok((
        identical && fresh.clean(),
        json!({
            "history": path,
            "identical": identical,
            "first_differing_event": first_diff,
            "same_verdict": same_verdict,
            "verdict": fresh.verdict_json(),
        }),
    ))
}

fn cmd_replay(args: &ReplayArgs) -> Result<Verdict> {
    let mut ok = true;
    let mut out = Vec::new();
    for p in &args.histories {
        let (good, v) = replay_one(p)?;
        ok &= good;
        out.push(v);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(Verdict::from_clean(ok))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Explore(a) => cmd_explore(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(Verdict::Clean) => ExitCode::SUCCESS,
        Ok(Verdict::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
