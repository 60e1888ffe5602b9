//! One instrumented run: fresh executor, sampler, workload, artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use taskbench_core::ising::{
    run_workload, CsvSink, MeasurementSink, NullSink, WorkloadConfig, WorkloadError, WorkloadResult,
};
use taskbench_core::measure::{
    builtin_sources, render_profile, CounterKind, CounterSelect, CounterStore, ProfileEntry,
    Profiler, SamplerBuilder,
};
use taskbench_core::trace::{CounterRecord, MetaRecord, TaskRecord, TraceStats, TraceWriter};
use taskbench_core::{ExecutionSummary, Executor, ExecutorConfig, RunClock};

use crate::plan::{ExecutorSpec, ExperimentPlan};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const PROFILE_FILE: &str = "profile.txt";
pub const COUNTERS_FILE: &str = "counters.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub executor: ExecutorSpec,
    pub rep: usize,
    /// Seed already offset by the repetition index.
    pub workload: WorkloadConfig,
    pub sample_period_ms: u64,
    pub counters: Vec<CounterSelect>,
    pub dir: PathBuf,
    pub trace: bool,
    pub measure: bool,
    pub dump_measurements: bool,
}

impl RunSpec {
    pub fn from_plan(plan: &ExperimentPlan, executor: &ExecutorSpec, rep: usize) -> Self {
        Self {
            executor: executor.clone(),
            rep,
            workload: WorkloadConfig {
                seed: plan.seed_for(rep),
                ..plan.workload.clone()
            },
            sample_period_ms: plan.sample_period_ms,
            counters: plan.counters.clone(),
            dir: plan.run_dir(&executor.label, rep),
            trace: plan.trace && plan.measure,
            measure: plan.measure,
            dump_measurements: plan.dump_measurements,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterSummary {
    pub name: String,
    pub kind: CounterKind,
    pub available: bool,
    pub samples: usize,
    pub first: Option<f64>,
    pub last: Option<f64>,
    /// `last - first`; meaningful for monotonic counters.
    pub delta: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub backend: String,
    pub workers: usize,
    pub steal: bool,
    pub rep: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub wall_time_ns: Option<u64>,
    pub workload: Option<WorkloadResult>,
    pub execution: Option<ExecutionSummary>,
    pub counters: Vec<CounterSummary>,
    pub profile: Vec<ProfileEntry>,
    pub trace: Option<TraceStats>,
    /// Artifacts written next to this summary, relative to the run directory.
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn counter(&self, name: &str) -> Option<&CounterSummary> {
        self.counters.iter().find(|c| c.name == name)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

fn summarize_counters(store: &CounterStore) -> Vec<CounterSummary> {
    store
        .sources()
        .into_iter()
        .map(|src| {
            let values: Vec<f64> = store.series(&src.name).iter().map(|s| s.value).collect();
            let first = values.first().copied();
            let last = values.last().copied();
            CounterSummary {
                kind: src.kind,
                available: src.available,
                samples: values.len(),
                first,
                last,
                delta: first.zip(last).map(|(a, b)| b - a),
                mean: (!values.is_empty())
                    .then(|| values.iter().sum::<f64>() / values.len() as f64),
                name: src.name,
            }
        })
        .collect()
}

/// Long format, one sample per line, in sampling order.
pub fn counters_csv(store: &CounterStore) -> String {
    let mut out = String::from("timestamp_ns,name,value\n");
    for s in store.samples() {
        let _ = writeln!(out, "{},{},{}", s.timestamp_ns, s.name, s.value);
    }
    out
}

fn write_file(dir: &Path, name: &str, body: &str, files: &mut Vec<String>) -> Result<(), String> {
    fs::write(dir.join(name), body).map_err(|e| format!("{}: {e}", dir.join(name).display()))?;
    files.push(name.to_owned());
    Ok(())
}

/// Executes one run and writes its artifacts. Failures are recorded in the
/// returned summary (and in `summary.json` when the directory is writable).
pub fn execute_run(spec: &RunSpec) -> RunSummary {
    let mut summary = RunSummary {
        label: spec.executor.label.clone(),
        backend: spec.executor.backend.as_str().to_owned(),
        workers: spec.executor.workers,
        steal: spec.executor.steal,
        rep: spec.rep,
        seed: spec.workload.seed,
        status: RunStatus::Ok,
        error: None,
        wall_time_ns: None,
        workload: None,
        execution: None,
        counters: Vec::new(),
        profile: Vec::new(),
        trace: None,
        files: Vec::new(),
    };
    if let Err(e) = run_into(spec, &mut summary) {
        summary.status = RunStatus::Failed;
        summary.error = Some(e);
    }
    summary.files.push(SUMMARY_FILE.to_owned());
    let body = serde_json::to_string_pretty(&summary).expect("run summaries always serialize");
    if let Err(e) = fs::write(spec.dir.join(SUMMARY_FILE), body + "\n") {
        summary.files.pop();
        log::error!("{}: cannot write summary: {e}", spec.dir.display());
    }
    summary
}

fn run_into(spec: &RunSpec, summary: &mut RunSummary) -> Result<(), String> {
    fs::create_dir_all(&spec.dir).map_err(|e| format!("{}: {e}", spec.dir.display()))?;
    let cfg = ExecutorConfig::new(spec.executor.backend, spec.executor.workers)
        .with_steal(spec.executor.steal);
    let clock = RunClock::new();
    let mut exec = Executor::with_clock(cfg, clock).map_err(|e| e.to_string())?;

    let writer = if spec.trace {
        let meta = MetaRecord::new(
            spec.executor.backend.as_str(),
            spec.executor.workers,
            spec.workload.seed,
            serde_json::to_value(&spec.workload).map_err(|e| e.to_string())?,
        );
        let path = spec.dir.join(TRACE_FILE);
        Some(TraceWriter::create(&path, meta).map_err(|e| format!("{}: {e}", path.display()))?)
    } else {
        None
    };

    let profiler = if spec.measure {
        let mut p = Profiler::new();
        if let Some(w) = &writer {
            let tx = w.sender();
            p = p.with_sink(move |t| tx.task(TaskRecord::from(t)));
        }
        let p = Arc::new(p);
        exec.attach_listener(p.clone()).map_err(|e| e.to_string())?;
        Some(p)
    } else {
        None
    };

    let h = exec.start().map_err(|e| e.to_string())?;
    let mut sampler = SamplerBuilder::new(Duration::from_millis(spec.sample_period_ms), clock)
        .sources(builtin_sources(&spec.counters, Some(&h)));
    if let Some(w) = &writer {
        let tx = w.sender();
        sampler = sampler.sink(move |s, kind| tx.counter(CounterRecord::from_sample(s, kind)));
    }
    let sampler = sampler.start().map_err(|e| e.to_string())?;

    let sink: Arc<dyn MeasurementSink> = if spec.dump_measurements {
        let path = spec.dir.join(MEASUREMENTS_FILE);
        Arc::new(CsvSink::create(&path).map_err(|e| format!("{}: {e}", path.display()))?)
    } else {
        Arc::new(NullSink)
    };
    let outcome = run_workload(&h, &spec.workload, sink);

    let store = sampler.stop();
    summary.execution = Some(exec.shutdown());
    drop(h);
    drop(exec);
    summary.trace = writer.map(TraceWriter::finish);
    if spec.trace {
        summary.files.push(TRACE_FILE.to_owned());
    }
    if spec.dump_measurements {
        summary.files.push(MEASUREMENTS_FILE.to_owned());
    }

    summary.counters = summarize_counters(&store);
    write_file(
        &spec.dir,
        COUNTERS_FILE,
        &counters_csv(&store),
        &mut summary.files,
    )?;
    if let Some(p) = &profiler {
        summary.profile = p.report(usize::MAX);
        write_file(
            &spec.dir,
            PROFILE_FILE,
            &render_profile(&summary.profile),
            &mut summary.files,
        )?;
    }

    let result = match outcome {
        Ok(r) => r,
        Err(WorkloadError::Sink { error, partial }) => {
            summary.workload = Some(*partial);
            return Err(format!("measurement sink failed: {error}"));
        }
        Err(e) => return Err(e.to_string()),
    };
    summary.wall_time_ns = Some(result.wall_time_ns);
    summary.workload = Some(result);
    if let Some(err) = summary.trace.as_ref().and_then(|t| t.error.clone()) {
        return Err(format!("trace write failed: {err}"));
    }
    Ok(())
}
