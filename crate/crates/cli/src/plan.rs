//! Experiment plans: which executors to compare, how often, on what
//! workload. Values come from defaults, then measurement environment
//! variables, then a TOML config file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use taskbench_core::ising::WorkloadConfig;
use taskbench_core::measure::{CounterSelect, MeasureConfig, TraceSetting};
use taskbench_core::Backend;

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_REPS: usize = 5;
pub const DEFAULT_OUT: &str = "taskbench-out";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorSpec {
    /// Unique within a plan; names the output subdirectory.
    pub label: String,
    pub backend: Backend,
    pub workers: usize,
    pub steal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub workload: WorkloadConfig,
    pub executors: Vec<ExecutorSpec>,
    pub reps: usize,
    pub sample_period_ms: u64,
    pub counters: Vec<CounterSelect>,
    pub out: PathBuf,
    pub trace: bool,
    /// Task timers and profile; off disables tracing as well.
    pub measure: bool,
    pub dump_measurements: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.reps == 0 {
            return Err("--reps must be at least 1".into());
        }
        if self.executors.is_empty() {
            return Err("at least one backend is required".into());
        }
        if self.executors.iter().any(|e| e.workers == 0) {
            return Err("--workers must be at least 1".into());
        }
        if self.sample_period_ms == 0 {
            return Err("--sample-period must be at least 1 ms".into());
        }
        self.workload.validate().map_err(|e| e.to_string())
    }

    pub fn sample_period(&self) -> Duration {
        Duration::from_millis(self.sample_period_ms)
    }

    /// Seed of repetition `rep`.
    pub fn seed_for(&self, rep: usize) -> u64 {
        self.workload.seed.wrapping_add(rep as u64)
    }

    pub fn run_dir(&self, label: &str, rep: usize) -> PathBuf {
        self.out.join(label).join(rep.to_string())
    }
}

/// Labels are the backend name, `-nosteal` when stealing is off, and a
/// numeric suffix for repeated configurations.
pub fn executor_specs(backends: &[Backend], workers: usize, steal: bool) -> Vec<ExecutorSpec> {
    let mut out: Vec<ExecutorSpec> = Vec::new();
    for &backend in backends {
        let mut base = backend.as_str().to_owned();
        if !steal {
            base.push_str("-nosteal");
        }
        let mut label = base.clone();
        let mut k = 2;
        while out.iter().any(|e| e.label == label) {
            label = format!("{base}-{k}");
            k += 1;
        }
        out.push(ExecutorSpec {
            label,
            backend,
            workers,
            steal,
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn items(&self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Config file contents. Keys mirror the long flags.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub backend: Option<OneOrMany>,
    pub workers: Option<usize>,
    pub walkers: Option<usize>,
    pub accumulators: Option<usize>,
    pub measurements: Option<u64>,
    pub burn_in: Option<u64>,
    pub lattice: Option<usize>,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub sample_period: Option<u64>,
    pub counters: Option<OneOrMany>,
    pub out: Option<PathBuf>,
    pub steal: Option<bool>,
    pub trace: Option<bool>,
    pub dump_measurements: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Flag values; `None` means "not given on the command line".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlagValues {
    pub backends: Vec<Backend>,
    pub workers: Option<usize>,
    pub walkers: Option<usize>,
    pub accumulators: Option<usize>,
    pub measurements: Option<u64>,
    pub burn_in: Option<u64>,
    pub lattice: Option<usize>,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub sample_period: Option<u64>,
    pub counters: Option<String>,
    pub out: Option<PathBuf>,
    pub no_steal: bool,
    pub trace: Option<bool>,
    pub dump_measurements: bool,
}

pub fn parse_counters(items: &[String]) -> Result<Vec<CounterSelect>, String> {
    if items.len() == 1 && items[0].trim() == "none" {
        return Ok(Vec::new());
    }
    CounterSelect::parse_list(&items.join(","))
}

/// Layers flags over the file over the environment over defaults.
pub fn build_plan(
    flags: &FlagValues,
    file: &FileConfig,
    env: &MeasureConfig,
    default_backends: &[Backend],
    default_reps: usize,
) -> Result<ExperimentPlan, String> {
    let backends = if !flags.backends.is_empty() {
        flags.backends.clone()
    } else if let Some(b) = &file.backend {
        b.items()
            .iter()
            .map(|s| s.parse::<Backend>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?
    } else {
        default_backends.to_vec()
    };
    let d = WorkloadConfig::default();
    let workload = WorkloadConfig {
        lattice: flags.lattice.or(file.lattice).unwrap_or(d.lattice),
        beta: flags.beta.or(file.beta).unwrap_or(d.beta),
        walkers: flags.walkers.or(file.walkers).unwrap_or(d.walkers),
        accumulators: flags
            .accumulators
            .or(file.accumulators)
            .unwrap_or(d.accumulators),
        measurements: flags
            .measurements
            .or(file.measurements)
            .unwrap_or(d.measurements),
        burn_in: flags.burn_in.or(file.burn_in).unwrap_or(d.burn_in),
        seed: flags.seed.or(file.seed).unwrap_or(d.seed),
    };
    let counters = match (&flags.counters, &file.counters) {
        (Some(c), _) => parse_counters(std::slice::from_ref(c))?,
        (None, Some(c)) => parse_counters(&c.items())?,
        (None, None) => env.counters.clone(),
    };
    let steal = !flags.no_steal && file.steal.unwrap_or(true);
    let env_trace = !matches!(env.trace, TraceSetting::Off);
    let plan = ExperimentPlan {
        executors: executor_specs(
            &backends,
            flags.workers.or(file.workers).unwrap_or(DEFAULT_WORKERS),
            steal,
        ),
        workload,
        reps: flags.reps.or(file.reps).unwrap_or(default_reps),
        sample_period_ms: flags
            .sample_period
            .or(file.sample_period)
            .unwrap_or(env.sample_period.as_millis() as u64),
        counters,
        out: flags
            .out
            .clone()
            .or(file.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        trace: flags.trace.or(file.trace).unwrap_or(env_trace),
        measure: env.enabled,
        dump_measurements: flags.dump_measurements || file.dump_measurements.unwrap_or(false),
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str(
            "backend = ['os-pool', 'user-tasks']\nworkers = 2\nwalkers = 6\nbeta = 0.5\nsample-period = 50\ncounters = 'steals_total'",
        )
        .unwrap();
        let flags = FlagValues {
            workers: Some(3),
            counters: Some("context_switches".into()),
            ..FlagValues::default()
        };
        let plan = build_plan(
            &flags,
            &file,
            &MeasureConfig::default(),
            &[Backend::UserTasks],
            5,
        )
        .unwrap();
        assert_eq!(plan.executors.len(), 2);
        assert!(plan.executors.iter().all(|e| e.workers == 3));
        assert_eq!(plan.workload.walkers, 6);
        assert_eq!(plan.workload.beta, 0.5);
        assert_eq!(plan.sample_period_ms, 50);
        assert_eq!(plan.counters, [CounterSelect::ContextSwitches]);
        assert_eq!(plan.reps, 5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("wokers = 2").is_err());
    }

    #[test]
    fn duplicate_backends_get_distinct_labels() {
        let specs = executor_specs(
            &[Backend::OsPool, Backend::OsPool, Backend::UserTasks],
            2,
            true,
        );
        let labels: Vec<_> = specs.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["os-pool", "os-pool-2", "user-tasks"]);
        assert_eq!(
            executor_specs(&[Backend::OsPool], 1, false)[0].label,
            "os-pool-nosteal"
        );
    }

    #[test]
    fn invalid_plans() {
        let bad = |flags: FlagValues| {
            build_plan(
                &flags,
                &FileConfig::default(),
                &MeasureConfig::default(),
                &[Backend::OsPool],
                1,
            )
            .is_err()
        };
        assert!(bad(FlagValues {
            reps: Some(0),
            ..Default::default()
        }));
        assert!(bad(FlagValues {
            accumulators: Some(0),
            ..Default::default()
        }));
        assert!(bad(FlagValues {
            workers: Some(0),
            ..Default::default()
        }));
        assert!(bad(FlagValues {
            sample_period: Some(0),
            ..Default::default()
        }));
    }
}
