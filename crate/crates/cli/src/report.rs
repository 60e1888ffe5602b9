//! Comparison reports, rendered only from files stored under the output
//! directory so that re-rendering is reproducible byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use taskbench_core::ising::WorkloadConfig;
use taskbench_core::measure::sources::{CTX_INVOLUNTARY, CTX_VOLUNTARY};
use taskbench_core::measure::CounterKind;
use taskbench_core::Backend;

use crate::plan::ExperimentPlan;
use crate::run::{RunSummary, SUMMARY_FILE};

pub const PLAN_FILE: &str = "plan.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub host: String,
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl Environment {
    pub fn detect() -> Self {
        let host = fs::read_to_string("/proc/sys/kernel/hostname")
            .ok()
            .or_else(|| std::env::var("HOSTNAME").ok())
            .map(|h| h.trim().to_owned())
            .filter(|h| !h.is_empty())
            .unwrap_or_else(|| "unknown".to_owned());
        Self {
            host,
            os: std::env::consts::OS.to_owned(),
            arch: std::env::consts::ARCH.to_owned(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// What `compare` stores next to the run directories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredPlan {
    pub plan: ExperimentPlan,
    pub environment: Environment,
}

impl StoredPlan {
    pub fn save(&self, out: &Path) -> Result<(), String> {
        let path = out.join(PLAN_FILE);
        let body = serde_json::to_string_pretty(self).map_err(|e| e.to_string())?;
        fs::write(&path, body + "\n").map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn load(out: &Path) -> Result<Self, String> {
        let path = out.join(PLAN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterAggregate {
    pub name: String,
    pub kind: CounterKind,
    /// Runs that produced at least one sample.
    pub runs: usize,
    /// Per-run end-minus-start for monotonic counters, per-run mean for gauges.
    pub values: Vec<f64>,
    pub median: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub rep: usize,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub wall_ms: Option<f64>,
    pub mean_energy: Option<f64>,
    pub mean_abs_magnetization: Option<f64>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendReport {
    pub label: String,
    pub backend: Backend,
    pub workers: usize,
    pub steal: bool,
    /// Planned repetitions.
    pub reps: usize,
    pub ok_runs: usize,
    pub failed_runs: usize,
    pub mean_wall_ms: Option<f64>,
    /// Sample standard deviation; zero for a single run.
    pub std_wall_ms: Option<f64>,
    pub runs: Vec<RunEntry>,
    pub counters: Vec<CounterAggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    /// Speedup of `a` over `b`: (mean_b - mean_a) / mean_b, in percent.
    pub a: String,
    pub b: String,
    pub percent: f64,
    /// Combined run-to-run deviation relative to mean_b, in percent.
    pub noise_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub claim: String,
    pub observed: String,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFigure {
    pub quantity: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub environment: Environment,
    pub seed: u64,
    pub reps: usize,
    pub workload: WorkloadConfig,
    pub backends: Vec<BackendReport>,
    pub speedups: Vec<Speedup>,
    pub directions: Vec<DirectionCheck>,
    /// Full-scale figures for context; not reproduced here.
    pub reference: Vec<ReferenceFigure>,
    pub failed_runs: usize,
}

pub fn reference_figures() -> Vec<ReferenceFigure> {
    let r = |q: &str, v: &str| ReferenceFigure {
        quantity: q.to_owned(),
        value: v.to_owned(),
    };
    vec![
        r("wall-time speedup, user-level tasks over OS threads", "21%"),
        r(
            "voluntary context switches, user-level tasks vs OS threads",
            "639 vs 1454",
        ),
        r(
            "involuntary context switches, user-level tasks vs OS threads",
            "18 vs 70",
        ),
    ]
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn load_summary(path: &Path) -> Result<RunSummary, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn aggregate_counters(summaries: &[RunSummary]) -> Vec<CounterAggregate> {
    let mut names: Vec<(String, CounterKind)> = Vec::new();
    for s in summaries {
        for c in &s.counters {
            if !names.iter().any(|(n, _)| n == &c.name) {
                names.push((c.name.clone(), c.kind));
            }
        }
    }
    names.sort_by(|a, b| a.0.cmp(&b.0));
    names
        .into_iter()
        .filter_map(|(name, kind)| {
            let values: Vec<f64> = summaries
                .iter()
                .filter_map(|s| s.counter(&name))
                .filter_map(|c| match kind {
                    CounterKind::Monotonic => c.delta,
                    CounterKind::Gauge => c.mean,
                })
                .collect();
            (!values.is_empty()).then(|| CounterAggregate {
                runs: values.len(),
                median: median(&values),
                mean: mean(&values),
                name,
                kind,
                values,
            })
        })
        .collect()
}

/// Builds the report from `plan.json` and every run's `summary.json`.
pub fn build_report(out: &Path) -> Result<ComparisonReport, String> {
    let stored = StoredPlan::load(out)?;
    let plan = &stored.plan;
    let mut backends = Vec::new();
    for spec in &plan.executors {
        let mut runs = Vec::new();
        let mut ok_summaries = Vec::new();
        for rep in 0..plan.reps {
            let rel_dir = Path::new(&spec.label).join(rep.to_string());
            let entry = match load_summary(&out.join(&rel_dir).join(SUMMARY_FILE)) {
                Ok(s) => {
                    let files = s
                        .files
                        .iter()
                        .map(|f| rel_dir.join(f))
                        .filter(|p| out.join(p).is_file())
                        .map(|p| p.to_string_lossy().replace('\\', "/"))
                        .collect();
                    let e = RunEntry {
                        rep,
                        seed: s.seed,
                        ok: s.is_ok() && s.wall_time_ns.is_some(),
                        error: s.error.clone(),
                        wall_ms: s.wall_time_ns.map(|ns| ns as f64 / 1e6),
                        mean_energy: s.workload.as_ref().map(|w| w.mean_energy),
                        mean_abs_magnetization: s
                            .workload
                            .as_ref()
                            .map(|w| w.mean_abs_magnetization),
                        files,
                    };
                    if e.ok {
                        ok_summaries.push(s);
                    }
                    e
                }
                Err(err) => RunEntry {
                    rep,
                    seed: plan.seed_for(rep),
                    ok: false,
                    error: Some(err),
                    wall_ms: None,
                    mean_energy: None,
                    mean_abs_magnetization: None,
                    files: Vec::new(),
                },
            };
            runs.push(entry);
        }
        let walls: Vec<f64> = runs
            .iter()
            .filter(|r| r.ok)
            .filter_map(|r| r.wall_ms)
            .collect();
        backends.push(BackendReport {
            label: spec.label.clone(),
            backend: spec.backend,
            workers: spec.workers,
            steal: spec.steal,
            reps: plan.reps,
            ok_runs: walls.len(),
            failed_runs: plan.reps - walls.len(),
            mean_wall_ms: (!walls.is_empty()).then(|| mean(&walls)),
            std_wall_ms: (!walls.is_empty()).then(|| sample_std(&walls)),
            runs,
            counters: aggregate_counters(&ok_summaries),
        });
    }

    let mut speedups = Vec::new();
    for a in &backends {
        for b in &backends {
            if a.label == b.label {
                continue;
            }
            if let (Some(ma), Some(mb), Some(sa), Some(sb)) =
                (a.mean_wall_ms, b.mean_wall_ms, a.std_wall_ms, b.std_wall_ms)
            {
                speedups.push(Speedup {
                    a: a.label.clone(),
                    b: b.label.clone(),
                    percent: (mb - ma) / mb * 100.0,
                    noise_percent: (sa * sa + sb * sb).sqrt() / mb * 100.0,
                });
            }
        }
    }

    let failed_runs = backends.iter().map(|b| b.failed_runs).sum();
    Ok(ComparisonReport {
        environment: stored.environment.clone(),
        seed: plan.workload.seed,
        reps: plan.reps,
        workload: plan.workload.clone(),
        directions: directions(&backends),
        backends,
        speedups,
        reference: reference_figures(),
        failed_runs,
    })
}

/// Direction-only comparisons between the first os-pool and the first
/// user-tasks configuration.
fn directions(backends: &[BackendReport]) -> Vec<DirectionCheck> {
    let find = |b: Backend| backends.iter().find(|r| r.backend == b);
    let (Some(os), Some(user)) = (find(Backend::OsPool), find(Backend::UserTasks)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    if let (Some(u), Some(o)) = (user.mean_wall_ms, os.mean_wall_ms) {
        out.push(DirectionCheck {
            claim: format!("{} wall time <= {}", user.label, os.label),
            observed: format!("{u:.3} ms vs {o:.3} ms"),
            holds: u <= o,
        });
    }
    for (name, what) in [
        (CTX_VOLUNTARY, "voluntary"),
        (CTX_INVOLUNTARY, "involuntary"),
    ] {
        let med = |r: &BackendReport| r.counters.iter().find(|c| c.name == name).map(|c| c.median);
        if let (Some(u), Some(o)) = (med(user), med(os)) {
            out.push(DirectionCheck {
                claim: format!(
                    "{} has fewer {what} context switches than {}",
                    user.label, os.label
                ),
                observed: format!("median {u} vs {o}"),
                holds: u < o,
            });
        }
    }
    out
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.prec$}"))
}

pub fn render_text(r: &ComparisonReport) -> String {
    let mut s = String::new();
    let w = &r.workload;
    let _ = writeln!(s, "taskbench comparison report");
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "host {} ({}/{}, {} cpus)",
        r.environment.host, r.environment.os, r.environment.arch, r.environment.cpus
    );
    let _ = writeln!(
        s,
        "workload: L={} beta={} walkers={} accumulators={} measurements={} burn_in={}",
        w.lattice, w.beta, w.walkers, w.accumulators, w.measurements, w.burn_in
    );
    let _ = writeln!(
        s,
        "seed {} (run i uses seed + i), {} repetitions",
        r.seed, r.reps
    );
    let _ = writeln!(s);

    let _ = writeln!(s, "wall time (mean +- sample std over successful runs)");
    let width = r
        .backends
        .iter()
        .map(|b| b.label.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let _ = writeln!(
        s,
        "  {:<width$}  {:>7}  {:>5}  {:>2}/{:<2}  {:>12}  {:>10}",
        "label", "workers", "steal", "ok", "R", "mean_ms", "std_ms"
    );
    for b in &r.backends {
        let _ = writeln!(
            s,
            "  {:<width$}  {:>7}  {:>5}  {:>2}/{:<2}  {:>12}  {:>10}",
            b.label,
            b.workers,
            b.steal,
            b.ok_runs,
            b.reps,
            opt(b.mean_wall_ms, 3),
            opt(b.std_wall_ms, 3)
        );
    }

    if !r.speedups.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "speedup of A over B = (mean_B - mean_A) / mean_B");
        for sp in &r.speedups {
            let _ = writeln!(
                s,
                "  {} over {}: {:+.2}% (run-to-run noise {:.2}%)",
                sp.a, sp.b, sp.percent, sp.noise_percent
            );
        }
    }

    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "counters (monotonic: end - start per run; gauges: per-run mean)"
    );
    for b in &r.backends {
        let _ = writeln!(s, "  {}", b.label);
        if b.counters.is_empty() {
            let _ = writeln!(s, "    (none)");
        }
        for c in &b.counters {
            let _ = writeln!(
                s,
                "    {:<30} {:<9} median {:>14.3}  mean {:>14.3}  runs {}",
                c.name,
                match c.kind {
                    CounterKind::Monotonic => "monotonic",
                    CounterKind::Gauge => "gauge",
                },
                c.median,
                c.mean,
                c.runs
            );
        }
    }

    if !r.directions.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "directions");
        for d in &r.directions {
            let _ = writeln!(
                s,
                "  [{}] {}: {}",
                if d.holds { "holds" } else { "does not hold" },
                d.claim,
                d.observed
            );
        }
    }

    let _ = writeln!(s);
    let _ = writeln!(s, "runs");
    for b in &r.backends {
        for run in &b.runs {
            let _ = writeln!(
                s,
                "  {}/{} seed {} {} wall_ms {} <E> {} <|M|> {}{}",
                b.label,
                run.rep,
                run.seed,
                if run.ok { "ok" } else { "FAILED" },
                opt(run.wall_ms, 3),
                opt(run.mean_energy, 5),
                opt(run.mean_abs_magnetization, 5),
                run.error
                    .as_ref()
                    .map_or_else(String::new, |e| format!(" ({e})"))
            );
            for f in &run.files {
                let _ = writeln!(s, "    {f}");
            }
        }
    }

    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "reference figures from a full-scale GPU production run (context only, not reproduced at this scale)"
    );
    for f in &r.reference {
        let _ = writeln!(s, "  {}: {}", f.quantity, f.value);
    }
    if r.failed_runs > 0 {
        let _ = writeln!(s);
        let _ = writeln!(s, "{} run(s) failed", r.failed_runs);
    }
    s
}

/// Writes `report.txt` and `report.json` into `out`.
pub fn write_report(out: &Path) -> Result<ComparisonReport, String> {
    let report = build_report(out)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    for (name, body) in [
        (REPORT_TXT, render_text(&report)),
        (REPORT_JSON, json + "\n"),
    ] {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(sample_std(&[5.0]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - 1.2909944487358056).abs() < 1e-12);
    }
}
