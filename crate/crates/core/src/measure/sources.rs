//! Built-in counter sources: process accounting from the host OS and
//! scheduler internals read from a running executor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sampler::{CounterKind, CounterSource};
use crate::exec::ExecHandle;

pub const CTX_VOLUNTARY: &str = "context_switches.voluntary";
pub const CTX_INVOLUNTARY: &str = "context_switches.involuntary";
pub const RSS: &str = "process_memory_rss";
pub const CPU: &str = "cpu_utilization";
pub const QUEUE_LENGTH: &str = "scheduler_queue_length";
pub const IDLE_RATE: &str = "scheduler_idle_rate";
pub const STEALS: &str = "steals_total";

/// Idle rate of a worker with nothing to run, in 0.01% units.
pub const IDLE_RATE_MAX: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Rusage {
    pub voluntary_switches: u64,
    pub involuntary_switches: u64,
    /// User plus system CPU time.
    pub cpu_ns: u64,
}

/// Process-wide resource usage, if the platform reports it.
#[cfg(unix)]
pub fn rusage_self() -> Option<Rusage> {
    // SAFETY: getrusage only writes into the provided struct.
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut ru) };
    if rc != 0 {
        return None;
    }
    let tv = |t: libc::timeval| t.tv_sec as u64 * 1_000_000_000 + t.tv_usec as u64 * 1_000;
    Some(Rusage {
        voluntary_switches: ru.ru_nvcsw as u64,
        involuntary_switches: ru.ru_nivcsw as u64,
        cpu_ns: tv(ru.ru_utime) + tv(ru.ru_stime),
    })
}

#[cfg(not(unix))]
pub fn rusage_self() -> Option<Rusage> {
    None
}

/// Resident set size in bytes from `/proc/self/statm`.
pub fn rss_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * page_size())
}

#[cfg(unix)]
fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as u64
    } else {
        4096
    }
}

#[cfg(not(unix))]
fn page_size() -> u64 {
    4096
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwitchKind {
    Voluntary,
    Involuntary,
}

/// Process-wide context switches since process start.
pub struct ContextSwitches {
    kind: SwitchKind,
}

impl ContextSwitches {
    pub fn new(kind: SwitchKind) -> Self {
        Self { kind }
    }
}

impl CounterSource for ContextSwitches {
    fn name(&self) -> &str {
        match self.kind {
            SwitchKind::Voluntary => CTX_VOLUNTARY,
            SwitchKind::Involuntary => CTX_INVOLUNTARY,
        }
    }

    fn kind(&self) -> CounterKind {
        CounterKind::Monotonic
    }

    fn available(&self) -> bool {
        rusage_self().is_some()
    }

    fn sample(&mut self, _now_ns: u64) -> Option<f64> {
        let ru = rusage_self()?;
        Some(match self.kind {
            SwitchKind::Voluntary => ru.voluntary_switches,
            SwitchKind::Involuntary => ru.involuntary_switches,
        } as f64)
    }
}

pub struct ProcessRss;

impl CounterSource for ProcessRss {
    fn name(&self) -> &str {
        RSS
    }

    fn kind(&self) -> CounterKind {
        CounterKind::Gauge
    }

    fn available(&self) -> bool {
        rss_bytes().is_some()
    }

    fn sample(&mut self, _now_ns: u64) -> Option<f64> {
        rss_bytes().map(|b| b as f64)
    }
}

/// Process CPU time over wall time since the previous sample, as a
/// percentage of all online cores.
pub struct CpuUtilization {
    last: Option<(std::time::Instant, u64)>,
    cores: f64,
}

impl CpuUtilization {
    pub fn new() -> Self {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get()) as f64;
        Self {
            last: rusage_self().map(|r| (std::time::Instant::now(), r.cpu_ns)),
            cores,
        }
    }
}

impl Default for CpuUtilization {
    fn default() -> Self {
        Self::new()
    }
}

impl CounterSource for CpuUtilization {
    fn name(&self) -> &str {
        CPU
    }

    fn kind(&self) -> CounterKind {
        CounterKind::Gauge
    }

    fn available(&self) -> bool {
        self.last.is_some()
    }

    fn sample(&mut self, _now_ns: u64) -> Option<f64> {
        let now = std::time::Instant::now();
        let cpu = rusage_self()?.cpu_ns;
        let (then, cpu_then) = self.last.replace((now, cpu))?;
        let wall = now.duration_since(then).as_nanos() as f64;
        if wall <= 0.0 {
            return Some(0.0);
        }
        Some((cpu.saturating_sub(cpu_then) as f64 / wall / self.cores * 100.0).clamp(0.0, 100.0))
    }
}

/// Mean number of ready tasks per worker queue.
pub struct QueueLength {
    exec: ExecHandle,
}

impl QueueLength {
    pub fn new(exec: ExecHandle) -> Self {
        Self { exec }
    }
}

impl CounterSource for QueueLength {
    fn name(&self) -> &str {
        QUEUE_LENGTH
    }

    fn kind(&self) -> CounterKind {
        CounterKind::Gauge
    }

    fn sample(&mut self, _now_ns: u64) -> Option<f64> {
        let lens = self.exec.queue_lengths();
        Some(lens.iter().sum::<usize>() as f64 / lens.len() as f64)
    }
}

/// Mean over workers of the share of the last period spent without a
/// running task, in 0.01% units (0 = always busy, 10000 = always idle).
pub struct IdleRate {
    exec: ExecHandle,
    last_ns: u64,
    last_busy: Vec<u64>,
}

impl IdleRate {
    pub fn new(exec: ExecHandle) -> Self {
        let now = exec.clock().now_ns();
        let last_busy = exec.busy_ns_at(now);
        Self {
            exec,
            last_ns: now,
            last_busy,
        }
    }
}

impl CounterSource for IdleRate {
    fn name(&self) -> &str {
        IDLE_RATE
    }

    fn kind(&self) -> CounterKind {
        CounterKind::Gauge
    }

    fn sample(&mut self, _now_ns: u64) -> Option<f64> {
        let now = self.exec.clock().now_ns();
        let busy = self.exec.busy_ns_at(now);
        let period = now.saturating_sub(self.last_ns);
        let rate = idle_rate(&self.last_busy, &busy, period);
        self.last_ns = now;
        self.last_busy = busy;
        rate
    }
}

/// Idle rate from two cumulative busy snapshots taken `period_ns` apart.
pub fn idle_rate(before: &[u64], after: &[u64], period_ns: u64) -> Option<f64> {
    if period_ns == 0 || before.len() != after.len() || after.is_empty() {
        return None;
    }
    let total: f64 = before
        .iter()
        .zip(after)
        .map(|(b, a)| {
            let busy = a.saturating_sub(*b).min(period_ns);
            IDLE_RATE_MAX * (period_ns - busy) as f64 / period_ns as f64
        })
        .sum();
    Some(total / after.len() as f64)
}

pub struct StealsTotal {
    exec: ExecHandle,
}

impl StealsTotal {
    pub fn new(exec: ExecHandle) -> Self {
        Self { exec }
    }
}

impl CounterSource for StealsTotal {
    fn name(&self) -> &str {
        STEALS
    }

    fn kind(&self) -> CounterKind {
        CounterKind::Monotonic
    }

    fn sample(&mut self, _now_ns: u64) -> Option<f64> {
        Some(self.exec.steals_total() as f64)
    }
}

/// Selectable counter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterSelect {
    ContextSwitches,
    ProcessMemoryRss,
    CpuUtilization,
    SchedulerQueueLength,
    SchedulerIdleRate,
    StealsTotal,
}

impl CounterSelect {
    pub const ALL: [CounterSelect; 6] = [
        CounterSelect::ContextSwitches,
        CounterSelect::ProcessMemoryRss,
        CounterSelect::CpuUtilization,
        CounterSelect::SchedulerQueueLength,
        CounterSelect::SchedulerIdleRate,
        CounterSelect::StealsTotal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CounterSelect::ContextSwitches => "context_switches",
            CounterSelect::ProcessMemoryRss => "process_memory_rss",
            CounterSelect::CpuUtilization => "cpu_utilization",
            CounterSelect::SchedulerQueueLength => "scheduler_queue_length",
            CounterSelect::SchedulerIdleRate => "scheduler_idle_rate",
            CounterSelect::StealsTotal => "steals_total",
        }
    }

    /// Parses a comma-separated list; `all` selects everything.
    pub fn parse_list(s: &str) -> Result<Vec<CounterSelect>, String> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            if item == "all" {
                out.extend(Self::ALL);
            } else {
                out.push(item.parse()?);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for CounterSelect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CounterSelect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown counter `{s}`"))
    }
}

/// Instantiates the selected sources. Scheduler sources need `exec`.
pub fn builtin_sources(
    select: &[CounterSelect],
    exec: Option<&ExecHandle>,
) -> Vec<Box<dyn CounterSource>> {
    let mut out: Vec<Box<dyn CounterSource>> = Vec::new();
    for sel in select {
        match (sel, exec) {
            (CounterSelect::ContextSwitches, _) => {
                out.push(Box::new(ContextSwitches::new(SwitchKind::Voluntary)));
                out.push(Box::new(ContextSwitches::new(SwitchKind::Involuntary)));
            }
            (CounterSelect::ProcessMemoryRss, _) => out.push(Box::new(ProcessRss)),
            (CounterSelect::CpuUtilization, _) => out.push(Box::new(CpuUtilization::new())),
            (CounterSelect::SchedulerQueueLength, Some(e)) => {
                out.push(Box::new(QueueLength::new(e.clone())))
            }
            (CounterSelect::SchedulerIdleRate, Some(e)) => {
                out.push(Box::new(IdleRate::new(e.clone())))
            }
            (CounterSelect::StealsTotal, Some(e)) => {
                out.push(Box::new(StealsTotal::new(e.clone())))
            }
            (_, None) => log::warn!("counter `{sel}` needs an executor; skipped"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_rate_bounds() {
        assert_eq!(idle_rate(&[0, 0], &[100, 100], 100), Some(0.0));
        assert_eq!(idle_rate(&[5, 5], &[5, 5], 100), Some(IDLE_RATE_MAX));
        assert_eq!(idle_rate(&[0, 0], &[50, 100], 100), Some(2_500.0));
        assert_eq!(idle_rate(&[0], &[0], 0), None);
    }

    #[test]
    fn counter_list_parsing() {
        assert_eq!(CounterSelect::parse_list("all").unwrap().len(), 6);
        assert_eq!(
            CounterSelect::parse_list("steals_total, context_switches").unwrap(),
            vec![CounterSelect::ContextSwitches, CounterSelect::StealsTotal]
        );
        assert!(CounterSelect::parse_list("bogus").is_err());
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn linux_process_sources_are_available() {
        let ru = rusage_self().unwrap();
        assert!(ru.cpu_ns > 0);
        assert!(rss_bytes().unwrap() > 0);
        let mut v = ContextSwitches::new(SwitchKind::Voluntary);
        let a = v.sample(0).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(2));
        assert!(v.sample(0).unwrap() >= a);
    }
}
