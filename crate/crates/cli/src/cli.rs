//! Command-line surface. Exit codes: 0 success, 1 failed run or trace
//! violations, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use taskbench_core::ising::{exact_values, WorkloadConfig};
use taskbench_core::measure::MeasureConfig;
use taskbench_core::trace::{export_timeline, read_trace, validate};
use taskbench_core::Backend;

use crate::plan::{build_plan, ExperimentPlan, FileConfig, FlagValues, DEFAULT_REPS};
use crate::report::{render_text, write_report, Environment, StoredPlan};
use crate::run::{execute_run, RunSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "taskbench",
    version,
    about = "Compare task-parallel executor backends on an Ising walker/accumulator workload"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// One backend, one instrumented run.
    Run(PlanArgs),
    /// Every backend x repetition, then a comparison report.
    Compare(PlanArgs),
    /// Check a trace file for lineage, interval and counter violations.
    ValidateTrace {
        trace: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-render report.txt and report.json from stored runs.
    Report { dir: PathBuf },
    /// Exact <E> and <|M|> by enumerating every state of an L x L lattice.
    Oracle {
        #[arg(long, default_value_t = 4)]
        lattice: usize,
        #[arg(long, default_value_t = 0.3)]
        beta: f64,
        /// Write the values as JSON to this file as well as stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a trace into a Chrome/Perfetto timeline.
    ExportTimeline { trace: PathBuf, out: PathBuf },
}

#[derive(Args, Debug, Default)]
pub struct PlanArgs {
    /// Backend to run; repeat to compare several.
    #[arg(long = "backend", value_parser = parse_backend)]
    pub backends: Vec<Backend>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub walkers: Option<usize>,
    #[arg(long)]
    pub accumulators: Option<usize>,
    /// Total measurements across all walkers.
    #[arg(long)]
    pub measurements: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Lattice side L.
    #[arg(long)]
    pub lattice: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Sampling period in milliseconds.
    #[arg(long)]
    pub sample_period: Option<u64>,
    /// Comma-separated counters, `all` or `none`.
    #[arg(long)]
    pub counters: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_steal: bool,
    #[arg(long, overrides_with = "no_trace")]
    pub trace: bool,
    #[arg(long, overrides_with = "trace")]
    pub no_trace: bool,
    /// Also write every measurement to measurements.csv.
    #[arg(long)]
    pub dump_measurements: bool,
    /// TOML file supplying any of these options; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse()
}

impl PlanArgs {
    pub fn flags(&self) -> FlagValues {
        FlagValues {
            backends: self.backends.clone(),
            workers: self.workers,
            walkers: self.walkers,
            accumulators: self.accumulators,
            measurements: self.measurements,
            burn_in: self.burn_in,
            lattice: self.lattice,
            beta: self.beta,
            seed: self.seed,
            reps: self.reps,
            sample_period: self.sample_period,
            counters: self.counters.clone(),
            out: self.out.clone(),
            no_steal: self.no_steal,
            trace: match (self.trace, self.no_trace) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            dump_measurements: self.dump_measurements,
        }
    }

    fn plan(
        &self,
        default_backends: &[Backend],
        default_reps: usize,
    ) -> Result<ExperimentPlan, String> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let env = MeasureConfig::from_env()?;
        build_plan(&self.flags(), &file, &env, default_backends, default_reps)
    }
}

fn usage(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => {
            let plan = match args.plan(&[Backend::UserTasks], 1) {
                Ok(p) => p,
                Err(e) => return usage(e),
            };
            if plan.executors.len() != 1 || plan.reps != 1 {
                return usage("`run` takes exactly one backend and one repetition; use `compare`");
            }
            experiment(&plan)
        }
        Command::Compare(args) => match args.plan(&Backend::ALL, DEFAULT_REPS) {
            Ok(plan) => experiment(&plan),
            Err(e) => usage(e),
        },
        Command::ValidateTrace { trace, json } => validate_trace(&trace, json),
        Command::Report { dir } => match write_report(&dir) {
            Ok(r) => {
                print!("{}", render_text(&r));
                if r.failed_runs > 0 {
                    EXIT_FAILURE
                } else {
                    EXIT_OK
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        },
        Command::Oracle { lattice, beta, out } => oracle(lattice, beta, out.as_deref()),
        Command::ExportTimeline { trace, out } => {
            match read_trace(&trace).map_err(|e| e.to_string()).and_then(|t| {
                export_timeline(&t, &out).map_err(|e| format!("{}: {e}", out.display()))
            }) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_FAILURE
                }
            }
        }
    }
}

/// Runs every executor x repetition in sequence, then writes the report.
pub fn experiment(plan: &ExperimentPlan) -> i32 {
    if let Err(e) = fs::create_dir_all(&plan.out) {
        eprintln!("error: {}: {e}", plan.out.display());
        return EXIT_FAILURE;
    }
    let stored = StoredPlan {
        plan: plan.clone(),
        environment: Environment::detect(),
    };
    if let Err(e) = stored.save(&plan.out) {
        eprintln!("error: {e}");
        return EXIT_FAILURE;
    }
    for spec in &plan.executors {
        for rep in 0..plan.reps {
            let run = RunSpec::from_plan(plan, spec, rep);
            log::info!("{} rep {} (seed {})", spec.label, rep, run.workload.seed);
            let summary = execute_run(&run);
            match (&summary.error, summary.wall_time_ns) {
                (Some(e), _) => eprintln!("{}/{}: FAILED: {e}", spec.label, rep),
                (None, Some(ns)) => eprintln!("{}/{}: {:.3} ms", spec.label, rep, ns as f64 / 1e6),
                (None, None) => {}
            }
        }
    }
    match write_report(&plan.out) {
        Ok(r) => {
            print!("{}", render_text(&r));
            if r.failed_runs > 0 {
                EXIT_FAILURE
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn validate_trace(path: &Path, json: bool) -> i32 {
    let trace = match read_trace(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return EXIT_FAILURE;
        }
    };
    let report = validate(&trace);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("reports serialize")
        );
    } else {
        println!(
            "{}: {} tasks, {} counter samples, {} discarded lines, {} violations",
            path.display(),
            report.tasks,
            report.counters,
            report.discarded_lines,
            report.violations.len()
        );
        for v in &report.violations {
            println!("  {v}");
        }
    }
    if report.is_valid() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

fn oracle(lattice: usize, beta: f64, out: Option<&Path>) -> i32 {
    let probe = WorkloadConfig {
        lattice,
        beta,
        ..WorkloadConfig::default()
    };
    if let Err(e) = probe.validate() {
        return usage(e);
    }
    let values = match exact_values(lattice, beta) {
        Ok(v) => v,
        Err(e) => return usage(e),
    };
    let body = serde_json::to_string_pretty(&values).expect("exact values serialize") + "\n";
    print!("{body}");
    if let Some(path) = out {
        if let Err(e) = fs::write(path, &body) {
            eprintln!("error: {}: {e}", path.display());
            return EXIT_FAILURE;
        }
    }
    EXIT_OK
}
