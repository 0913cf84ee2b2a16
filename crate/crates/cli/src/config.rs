use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rmelab::broadcast::BroadcastKind;
use rmelab::lab::{LockSpec, SystemSpec};
use rmelab::{Limits, RandomConfig, RmrKind, RmrModel};
use serde::{Deserialize, Serialize};

/// Errors in the experiment configuration. These map to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LockKindArg {
    Wr,
    Arbitrator,
    Tournament,
    Semi,
    Super,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Cc,
    Dsm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerArg {
    Random,
    RoundRobin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// A WR-Lock process crashes right after its FAS and re-enters next to the CS holder.
    CrashAfterFas,
    /// Drives successive processes one level deeper into the recursive lock.
    Escalation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockConfig {
    pub kind: LockKindArg,
    /// Number of levels of the recursive lock; `ceil(log2(n + 1))` when unset.
    pub levels: Option<u32>,
    /// Recycle WR-Lock nodes through the reclamation layer.
    pub reclaim: bool,
}

impl Default for LockConfig {
    fn default() -> Self {
        LockConfig { kind: LockKindArg::Super, levels: None, reclaim: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelArg,
    /// CC only: whether a failed CAS invalidates other cached copies.
    pub failed_cas_invalidates: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelArg::Cc, failed_cas_invalidates: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrashConfig {
    /// Probability that a scheduled process is crashed instead of stepped.
    pub probability: f64,
    /// Probability used inside a sensitive window; defaults to `probability`.
    pub sensitive_probability: Option<f64>,
    /// Crashes allowed per process per super-passage.
    pub budget: u32,
    /// Never crash inside a sensitive window.
    pub avoid_sensitive: bool,
    /// Only these processes may crash (all when empty).
    pub processes: Vec<usize>,
}

impl Default for CrashConfig {
    fn default() -> Self {
        CrashConfig { probability: 0.0, sensitive_probability: None, budget: 2, avoid_sensitive: false, processes: vec![] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Everything one `run` invocation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub requests: u32,
    pub cs_steps: u32,
    pub seeds: u64,
    pub seed_start: u64,
    pub max_steps: u64,
    pub fairness_window: u32,
    pub scheduler: SchedulerArg,
    pub scenario: Option<Scenario>,
    /// Deepest level reached by the escalation scenario; defaults to the number of levels.
    pub escalation_level: Option<u32>,
    pub lock: LockConfig,
    pub model: ModelConfig,
    pub crash: CrashConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 4,
            requests: 1,
            cs_steps: 1,
            seeds: 1,
            seed_start: 0,
            max_steps: Limits::default().max_steps,
            fairness_window: 8,
            scheduler: SchedulerArg::Random,
            scenario: None,
            escalation_level: None,
            lock: LockConfig::default(),
            model: ModelConfig::default(),
            crash: CrashConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn model(&self) -> RmrModel {
        let kind = match self.model.kind {
            ModelArg::Cc => RmrKind::Cc,
            ModelArg::Dsm => RmrKind::Dsm,
        };
        RmrModel { kind, failed_cas_invalidates: self.model.failed_cas_invalidates }
    }

    pub fn lock_spec(&self) -> Result<LockSpec, ConfigError> {
        let l = &self.lock;
        let reclaim = l.reclaim.then_some(match self.model.kind {
            ModelArg::Cc => BroadcastKind::Cc,
            ModelArg::Dsm => BroadcastKind::Dsm,
        });
        if l.levels.is_some() && l.kind != LockKindArg::Super {
            return invalid("lock.levels only applies to the super lock");
        }
        Ok(match l.kind {
            LockKindArg::Wr => LockSpec::Wr { reclaim },
            LockKindArg::Semi => LockSpec::Semi { reclaim },
            LockKindArg::Super => LockSpec::Super { levels: l.levels, reclaim },
            LockKindArg::Arbitrator | LockKindArg::Tournament if l.reclaim => {
                return invalid("lock.reclaim requires a WR-Lock based stack (wr, semi or super)")
            }
            LockKindArg::Arbitrator => LockSpec::Arbitrator,
            LockKindArg::Tournament => LockSpec::Tournament,
        })
    }

    pub fn system_spec(&self) -> Result<SystemSpec, ConfigError> {
        let spec = SystemSpec {
            n: self.n,
            lock: self.lock_spec()?,
            model: self.model(),
            requests: self.requests,
            cs_steps: self.cs_steps,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn random_config(&self, seed: u64) -> RandomConfig {
        let c = &self.crash;
        RandomConfig {
            seed,
            crash_probability: c.probability,
            sensitive_crash_probability: c.sensitive_probability.unwrap_or(c.probability),
            avoid_sensitive: c.avoid_sensitive,
            crash_budget_per_superpassage: c.budget,
            fairness_window: self.fairness_window,
            crashable: c.processes.clone(),
        }
    }

    pub fn limits(&self) -> Limits {
        Limits { max_steps: self.max_steps }
    }

    /// Levels of the recursive lock as built, if the stack is one.
    pub fn levels(&self) -> Option<u32> {
        match self.lock.kind {
            LockKindArg::Super => Some(self.lock.levels.unwrap_or_else(|| rmelab::composite::default_levels(self.n))),
            _ => None,
        }
    }

    /// Rejects configurations that are not internally consistent.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system_spec()?;
        let c = &self.crash;
        for (name, p) in [("crash.probability", Some(c.probability)), ("crash.sensitive_probability", c.sensitive_probability)] {
            if let Some(p) = p {
                if !(0.0..=1.0).contains(&p) {
                    return invalid(format!("{name} must be within [0, 1], got {p}"));
                }
            }
        }
        if let Some(&p) = c.processes.iter().find(|&&p| p == 0 || p > self.n) {
            return invalid(format!("crash.processes names process {p}, but processes are 1..={}", self.n));
        }
        if self.requests == 0 {
            return invalid("requests must be at least 1");
        }
        if self.seeds == 0 {
            return invalid("seeds must be at least 1");
        }
        if self.fairness_window == 0 {
            return invalid("fairness_window must be at least 1");
        }
        if self.escalation_level.is_some() && self.scenario != Some(Scenario::Escalation) {
            return invalid("escalation_level only applies to the escalation scenario");
        }
        match self.scenario {
            Some(Scenario::CrashAfterFas) => {
                if self.lock.kind != LockKindArg::Wr {
                    return invalid("the crash-after-fas scenario needs lock.kind = \"wr\"");
                }
                if self.n < 2 {
                    return invalid("the crash-after-fas scenario needs n >= 2");
                }
            }
            Some(Scenario::Escalation) => {
                let Some(levels) = self.levels() else {
                    return invalid("the escalation scenario needs lock.kind = \"super\"");
                };
                let x = self.escalation_level.unwrap_or(levels);
                if x == 0 || x > levels || x as usize > self.n {
                    return invalid(format!(
                        "escalation_level must be within 1..={}, got {x}",
                        levels.min(self.n as u32)
                    ));
                }
            }
            None => {}
        }
        Ok(())
    }
}
