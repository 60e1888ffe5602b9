//! Environment toggles for measurement.
//!
//! | variable                      | meaning                                   |
//! |-------------------------------|-------------------------------------------|
//! | `TASKBENCH_MEASURE`           | `0`/`off`/`false` disables task timers     |
//! | `TASKBENCH_SAMPLE_PERIOD_MS`  | sampler period in milliseconds            |
//! | `TASKBENCH_COUNTERS`          | comma list of counters, `all`, or `none`  |
//! | `TASKBENCH_TRACE`             | trace output path, or `off`               |

use std::path::PathBuf;
use std::time::Duration;

use super::sources::CounterSelect;

pub const ENV_MEASURE: &str = "TASKBENCH_MEASURE";
pub const ENV_SAMPLE_PERIOD_MS: &str = "TASKBENCH_SAMPLE_PERIOD_MS";
pub const ENV_COUNTERS: &str = "TASKBENCH_COUNTERS";
pub const ENV_TRACE: &str = "TASKBENCH_TRACE";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceSetting {
    /// Use the caller's default location.
    Default,
    Off,
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasureConfig {
    pub enabled: bool,
    pub sample_period: Duration,
    pub counters: Vec<CounterSelect>,
    pub trace: TraceSetting,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sample_period: Duration::from_millis(100),
            counters: CounterSelect::ALL.to_vec(),
            trace: TraceSetting::Default,
        }
    }
}

impl MeasureConfig {
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Applies overrides from `lookup` on top of the defaults.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut cfg = Self::default();
        if let Some(v) = lookup(ENV_MEASURE) {
            cfg.enabled =
                parse_bool(&v).ok_or_else(|| format!("{ENV_MEASURE}: bad value `{v}`"))?;
        }
        if let Some(v) = lookup(ENV_SAMPLE_PERIOD_MS) {
            let ms: u64 = v
                .trim()
                .parse()
                .map_err(|_| format!("{ENV_SAMPLE_PERIOD_MS}: bad value `{v}`"))?;
            if ms == 0 {
                return Err(format!("{ENV_SAMPLE_PERIOD_MS} must be at least 1"));
            }
            cfg.sample_period = Duration::from_millis(ms);
        }
        if let Some(v) = lookup(ENV_COUNTERS) {
            cfg.counters = if v.trim() == "none" {
                Vec::new()
            } else {
                CounterSelect::parse_list(&v).map_err(|e| format!("{ENV_COUNTERS}: {e}"))?
            };
        }
        if let Some(v) = lookup(ENV_TRACE) {
            cfg.trace = match v.trim() {
                "" => TraceSetting::Default,
                t if parse_bool(t) == Some(false) => TraceSetting::Off,
                t => TraceSetting::Path(PathBuf::from(t)),
            };
        }
        Ok(cfg)
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "on" | "true" | "yes" => Some(true),
        "0" | "off" | "false" | "no" => Some(false),
        _ => None,
    }
}
