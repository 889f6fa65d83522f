//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 usage error, 2 failed bound or invariant,
//! 3 solver error, 4 unknown experiment, 5 unwritable output path.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::bregman::{check_summa, mirror_descent_step, KlSimplex, NegativeEntropy, ProxGradFactory};
use crate::counterexamples::{
    build_tenberge_instance, maxdiff_objective, random_search, SignRule, StiefelBlockSet, SweepPolicy,
    TenBergeBlockFactory, VaidaFactory, VaidaObjective, VaidaState,
};
use crate::diagnostics::{
    check_linear_rate, check_pl_inequality, check_step_summability, check_sublinear_bound, detect_cycle,
    gradient_norms, BoundReport, SummabilityReport,
};
use crate::engine::{
    run_mm, seeded_samples, wrap_viscosity, CheckLevel, CycleDetection, IterateTrace, Objective, RunFailure,
    RunOptions, StopRule, SurrogateFactory, TerminationReason,
};
use crate::linalg::RealVector;
use crate::problems::{quad_small, seeded_simplex_points, simplex_linear, BregmanFactory, LassoProblem, QuadraticUpperBound};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_BOUND_FAILURE: i32 = 2;
pub const EXIT_SOLVER_ERROR: i32 = 3;
pub const EXIT_UNKNOWN_EXPERIMENT: i32 = 4;
pub const EXIT_UNWRITABLE: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckLevelArg {
    Off,
    Cheap,
    Full,
}

impl From<CheckLevelArg> for CheckLevel {
    fn from(c: CheckLevelArg) -> Self {
        match c {
            CheckLevelArg::Off => CheckLevel::Off,
            CheckLevelArg::Cheap => CheckLevel::Cheap,
            CheckLevelArg::Full => CheckLevel::Full,
        }
    }
}

/// Solver and stopping parameters shared by `run` and `batch`.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub step_tol: f64,
    /// Relative objective-decrease tolerance; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub obj_tol: f64,
    /// Step size; each experiment has its own default.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Viscosity penalty ρ.
    #[arg(long)]
    pub viscosity: Option<f64>,
    /// Branch policy for set-valued updates: canonical, nearest, opposite
    /// (block experiments) or positive, alternating (EM experiment).
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long, value_enum, default_value_t = CheckLevelArg::Cheap)]
    pub check_level: CheckLevelArg,
    #[arg(long, default_value_t = 12345)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub experiment: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// Experiments to run; all registered ones when empty.
    pub experiments: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Directory receiving `<name>.trace.<ext>` and `<name>.report.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List registered experiments.
    List,
    /// Run one experiment.
    Run(RunArgs),
    /// Run several experiments, in parallel with `--jobs`.
    Batch(BatchArgs),
}

#[derive(Debug, Parser)]
#[command(name = "mmtk", version, about = "Majorization-minimization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Everything an experiment needs from the command line.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub max_iters: usize,
    pub step_tol: f64,
    pub obj_tol: f64,
    pub alpha: Option<f64>,
    pub viscosity: Option<f64>,
    pub policy: Option<String>,
    pub check_level: CheckLevel,
    pub trace_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            max_iters: 1000,
            step_tol: 1e-10,
            obj_tol: 0.0,
            alpha: None,
            viscosity: None,
            policy: None,
            check_level: CheckLevel::Cheap,
            trace_out: None,
            report_out: None,
            format: Format::Json,
            seed: 12345,
        }
    }

    fn from_solver(name: &str, s: &SolverArgs, format: Format) -> Self {
        Self {
            name: name.to_string(),
            max_iters: s.max_iters,
            step_tol: s.step_tol,
            obj_tol: s.obj_tol,
            alpha: s.alpha,
            viscosity: s.viscosity,
            policy: s.policy.clone(),
            check_level: s.check_level.into(),
            trace_out: None,
            report_out: None,
            format,
            seed: s.seed,
        }
    }

    fn stop(&self) -> Result<StopRule, String> {
        StopRule::new(self.max_iters, self.step_tol, self.obj_tol).map_err(|e| e.to_string())
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            check_level: self.check_level,
            seed: self.seed,
            ..RunOptions::default()
        }
    }
}

/// Result of one experiment: the trace to serialize plus its report.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub trace: Option<IterateTrace>,
    pub bounds: Map<String, Value>,
    pub diagnostics: Map<String, Value>,
    /// Names of failed bounds or invariants.
    pub failures: Vec<String>,
    pub error: Option<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            trace: None,
            bounds: Map::new(),
            diagnostics: Map::new(),
            failures: Vec::new(),
            error: None,
        }
    }

    fn errored(error: impl ToString) -> Self {
        let mut o = Self::new();
        o.error = Some(error.to_string());
        o
    }

    fn bound(&mut self, report: &BoundReport) {
        if !report.passed {
            self.failures.push(report.bound_name.clone());
        }
        self.bounds.insert(report.bound_name.clone(), json!(report));
    }

    fn summability(&mut self, r: &SummabilityReport) {
        self.bound(&r.per_step);
        self.bound(&r.cumulative);
        let half = &r.cumulative_half_budget;
        self.diag(&half.bound_name, json!(half));
    }

    fn invariant(&mut self, name: &str, holds: bool) {
        if !holds {
            self.failures.push(name.to_string());
        }
        self.diagnostics.insert(name.to_string(), json!(holds));
    }

    fn diag(&mut self, name: &str, value: Value) {
        self.diagnostics.insert(name.to_string(), value);
    }

    fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            EXIT_SOLVER_ERROR
        } else if !self.failures.is_empty() {
            EXIT_BOUND_FAILURE
        } else {
            EXIT_OK
        }
    }

    /// Takes the trace of a run, keeping the partial trace of a failed one.
    fn absorb(&mut self, run: Result<IterateTrace, RunFailure>) -> Option<IterateTrace> {
        match run {
            Ok(t) => {
                self.trace = Some(t.clone());
                Some(t)
            }
            Err(RunFailure { error, trace }) => {
                self.trace = Some(trace);
                self.error = Some(error.to_string());
                None
            }
        }
    }
}

pub type Runner = fn(&ExperimentConfig) -> Outcome;

#[derive(Clone)]
pub struct Entry {
    pub name: &'static str,
    pub kind: &'static str,
    pub description: &'static str,
    pub run: Runner,
}

/// Named experiments available to `run` and `batch`.
#[derive(Clone, Default)]
pub struct Registry {
    entries: Vec<Entry>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Entry {
            name: "vaida-cycle",
            kind: "counterexample",
            description: "EM update oscillating between (3, ±1/√3)",
            run: run_vaida,
        });
        r.register(Entry {
            name: "tenberge-cycle",
            kind: "counterexample",
            description: "generalized CCA block relaxation cycling through four states",
            run: run_tenberge_cycle,
        });
        r.register(Entry {
            name: "tenberge-viscosity",
            kind: "counterexample",
            description: "the same block relaxation with a viscosity penalty (default 0.1)",
            run: run_tenberge_viscosity,
        });
        r.register(Entry {
            name: "quad-small",
            kind: "problem",
            description: "10-dim quadratic, spectrum in [1, 4], quadratic upper bound MM",
            run: run_quad_small,
        });
        r.register(Entry {
            name: "lasso-desk",
            kind: "problem",
            description: "20-feature lasso solved by proximal gradient (alpha 0.9/L)",
            run: run_lasso_desk,
        });
        r.register(Entry {
            name: "simplex-linear",
            kind: "problem",
            description: "linear objective on the simplex, exponentiated gradient (alpha 0.1)",
            run: run_simplex_linear,
        });
        r
    }

    pub fn register(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }
}

pub fn cmd_list(registry: &Registry, out: &mut dyn Write) -> i32 {
    let mut text = format!("{:<20} {:<16} {}\n", "NAME", "KIND", "DESCRIPTION");
    for e in registry.entries() {
        let _ = writeln!(text, "{:<20} {:<16} {}", e.name, e.kind, e.description);
    }
    match out.write_all(text.as_bytes()) {
        Ok(()) => EXIT_OK,
        Err(_) => EXIT_UNWRITABLE,
    }
}

/// Runs one experiment and writes its files; returns the exit code.
pub fn cmd_run(registry: &Registry, config: &ExperimentConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(entry) = registry.get(&config.name) else {
        let _ = writeln!(err, "unknown experiment '{}'; try `list`", config.name);
        return EXIT_UNKNOWN_EXPERIMENT;
    };
    let trace_file = match open_output(config.trace_out.as_deref(), err) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let report_file = match open_output(config.report_out.as_deref(), err) {
        Ok(f) => f,
        Err(code) => return code,
    };

    let outcome = (entry.run)(config);
    let code = outcome.exit_code();

    if let (Some(file), Some(trace)) = (trace_file, outcome.trace.as_ref()) {
        let written = match config.format {
            Format::Json => write_trace_json(file, trace),
            Format::Csv => write_trace_csv(file, trace),
        };
        if let Err(e) = written {
            let _ = writeln!(err, "cannot write trace: {e}");
            return EXIT_UNWRITABLE;
        }
    }
    let report = report_json(config, &outcome, code);
    if let Some(file) = report_file {
        let mut w = BufWriter::new(file);
        let written = serde_json::to_writer_pretty(&mut w, &report)
            .map_err(std::io::Error::other)
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush());
        if let Err(e) = written {
            let _ = writeln!(err, "cannot write report: {e}");
            return EXIT_UNWRITABLE;
        }
    }

    let _ = writeln!(out, "{}", summary_line(config, &outcome, code));
    if let Some(e) = &outcome.error {
        let _ = writeln!(err, "solver error: {e}");
    }
    for f in &outcome.failures {
        let _ = writeln!(err, "failed: {f}");
    }
    code
}

fn open_output(path: Option<&Path>, err: &mut dyn Write) -> Result<Option<File>, i32> {
    match path {
        None => Ok(None),
        Some(p) => File::create(p).map(Some).map_err(|e| {
            let _ = writeln!(err, "cannot open {}: {e}", p.display());
            EXIT_UNWRITABLE
        }),
    }
}

fn summary_line(config: &ExperimentConfig, outcome: &Outcome, code: i32) -> String {
    let mut s = format!("{}: exit {code}", config.name);
    if let Some(t) = &outcome.trace {
        let _ = write!(
            s,
            ", {} iterations, termination {}, f = {:.16e}",
            t.iterations(),
            termination_name(t.termination),
            t.last_value()
        );
        if let Some(step) = t.final_step_norm() {
            let _ = write!(s, ", final step {step:.3e}");
        }
    }
    s
}

pub fn termination_name(t: TerminationReason) -> String {
    match t {
        TerminationReason::Converged => "converged".into(),
        TerminationReason::MaxIters => "max_iters".into(),
        TerminationReason::CycleDetected { period } => format!("cycle_detected(period={period})"),
        TerminationReason::Error => "error".into(),
    }
}

fn report_json(config: &ExperimentConfig, outcome: &Outcome, code: i32) -> Value {
    let (iterations, termination, final_value, final_step) = match &outcome.trace {
        Some(t) => (
            json!(t.iterations()),
            json!(termination_name(t.termination)),
            json!(finite_or_null(t.last_value())),
            json!(t.final_step_norm()),
        ),
        None => (Value::Null, Value::Null, Value::Null, Value::Null),
    };
    json!({
        "experiment": config.name,
        "exit_code": code,
        "seed": config.seed,
        "iterations": iterations,
        "termination": termination,
        "final_value": final_value,
        "final_step_norm": final_step,
        "bounds": outcome.bounds,
        "diagnostics": outcome.diagnostics,
        "failures": outcome.failures,
        "error": outcome.error,
    })
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// 17 significant digits, so every double round-trips.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

fn extras_json(trace: &IterateTrace, n: usize) -> String {
    let mut s = String::from("{");
    if n > 0 {
        for (i, (k, vals)) in trace.extras[n - 1].iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&serde_json::to_string(k).expect("string keys serialize"));
            s.push_str(":[");
            let nums: Vec<String> = vals.iter().map(|v| format_number(*v)).collect();
            s.push_str(&nums.join(","));
            s.push(']');
        }
    }
    s.push('}');
    s
}

/// Fields of record `n`: `(n, f, step_norm, surrogate_gap, extras)`; the
/// step and gap of record 0 are absent.
fn record_fields(trace: &IterateTrace, n: usize) -> (String, String, String, String, String) {
    let (step, gap) = if n == 0 {
        ("null".to_string(), "null".to_string())
    } else {
        (format_number(trace.step_norms[n - 1]), format_number(trace.surrogate_gaps[n - 1]))
    };
    (
        n.to_string(),
        format_number(trace.objective_values[n]),
        step,
        gap,
        extras_json(trace, n),
    )
}

/// One JSON object per line.
pub fn write_trace_json(file: File, trace: &IterateTrace) -> std::io::Result<()> {
    let mut w = BufWriter::new(file);
    for n in 0..trace.iterates.len() {
        let (n, f, step, gap, extras) = record_fields(trace, n);
        writeln!(
            w,
            "{{\"n\":{n},\"f\":{f},\"step_norm\":{step},\"surrogate_gap\":{gap},\"extras\":{extras}}}"
        )?;
    }
    w.flush()
}

pub const CSV_HEADER: [&str; 5] = ["n", "f", "step_norm", "surrogate_gap", "extras"];

/// Fixed header; absent values are empty cells; extras are a JSON object.
pub fn write_trace_csv(file: File, trace: &IterateTrace) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CSV_HEADER)?;
    for n in 0..trace.iterates.len() {
        let (n, f, step, gap, extras) = record_fields(trace, n);
        let blank = |s: String| if s == "null" { String::new() } else { s };
        w.write_record([n, blank(f), blank(step), blank(gap), extras])?;
    }
    w.flush()
}

fn trace_json(trace: &IterateTrace) -> Value {
    json!({
        "iterations": trace.iterations(),
        "termination": termination_name(trace.termination),
    })
}

// ---- experiments ----

fn run_vaida(config: &ExperimentConfig) -> Outcome {
    let rule = match config.policy.as_deref() {
        None | Some("alternating") => SignRule::AlternatingPaper,
        Some("positive") => SignRule::PositiveBranch,
        Some(other) => return Outcome::errored(format!("unknown sign rule '{other}'")),
    };
    let stop = match config.stop() {
        Ok(s) => s,
        Err(e) => return Outcome::errored(e),
    };
    let options = RunOptions {
        cycle_detection: Some(CycleDetection {
            point_tol: 1e-12,
            max_period: 8,
        }),
        ..config.options()
    };
    let factory = VaidaFactory { rule };
    let x0 = VaidaState::reference_start().to_vector();
    let mut outcome = Outcome::new();
    let run = match config.viscosity {
        Some(rho) => match wrap_viscosity(factory, rho) {
            Ok(w) => run_mm(&VaidaObjective, &w, &x0, &stop, &options),
            Err(e) => return Outcome::errored(e),
        },
        None => run_mm(&VaidaObjective, &factory, &x0, &stop, &options),
    };
    let Some(trace) = outcome.absorb(run) else {
        return outcome;
    };
    let period = detect_cycle(&trace, 1e-12, 8);
    outcome.diag("detected_period", json!(period));
    let (lo, hi) = spread(&trace.objective_values);
    outcome.diag("objective_spread", json!(hi - lo));
    outcome.diag("run", trace_json(&trace));
    outcome
}

fn spread(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Block-level run of the three-block instance; `max_iters` counts sweeps.
fn run_tenberge(config: &ExperimentConfig, viscosity: Option<f64>) -> Outcome {
    let policy = match config.policy.as_deref() {
        None => SweepPolicy::OppositeOfCurrent,
        Some(name) => match SweepPolicy::parse(name) {
            Ok(p) => p,
            Err(e) => return Outcome::errored(e),
        },
    };
    let (problem, start) = build_tenberge_instance();
    let problem = Arc::new(problem);
    let m = problem.num_blocks();
    let stop = match StopRule::new(config.max_iters.saturating_mul(m), config.step_tol, config.obj_tol) {
        Ok(s) => s,
        Err(e) => return Outcome::errored(e),
    };
    let options = RunOptions {
        step_window: m,
        cycle_detection: Some(CycleDetection {
            point_tol: 1e-10,
            max_period: 4 * m,
        }),
        ..config.options()
    };
    let factory = TenBergeBlockFactory::new(problem.clone(), policy);
    let x0 = start.to_vector();
    let mut outcome = Outcome::new();
    let run = match viscosity {
        Some(rho) => match wrap_viscosity(&factory, rho) {
            Ok(w) => run_mm(factory.objective(), &w, &x0, &stop, &options),
            Err(e) => return Outcome::errored(e),
        },
        None => run_mm(factory.objective(), &factory, &x0, &stop, &options),
    };
    let block_trace = match run {
        Ok(t) => t,
        Err(RunFailure { error, trace }) => {
            outcome.trace = Some(trace.coarsen(m));
            outcome.error = Some(error.to_string());
            return outcome;
        }
    };
    let sweeps = block_trace.coarsen(m);
    let period = detect_cycle(&sweeps, 1e-10, 8);
    outcome.diag("detected_period", json!(period));
    outcome.diag("block_level", trace_json(&block_trace));
    let (lo, hi) = spread(&block_trace.objective_values);
    outcome.diag("cycle_objective", json!(-hi));
    outcome.diag("objective_spread", json!(hi - lo));
    outcome.diag(
        "stiefel_residual",
        json!(sweeps
            .iterates
            .iter()
            .filter_map(|x| StiefelBlockSet::from_vector_unchecked(x, &problem.block_shapes()).ok())
            .map(|s| s.stiefel_residual())
            .fold(0.0, f64::max)),
    );

    match viscosity {
        None => {
            if let Ok(summ) = check_step_summability(&sweeps, 1.0, sweeps.last_value()) {
                outcome.diag("cumulative_squared_steps", json!(summ.partial_sums.last()));
                outcome.diag("steps_square_summable", json!(summ.passed()));
            }
            if let Ok((best, _)) = random_search(&problem, 10_000, config.seed) {
                outcome.diag("random_search_best", json!(best));
                if let Ok(v) = maxdiff_objective(&problem, &start) {
                    outcome.diag("random_search_margin", json!(best - v));
                }
            }
        }
        Some(rho) => {
            outcome.invariant("no_cycle", !matches!(block_trace.termination, TerminationReason::CycleDetected { .. }));
            let monotone = block_trace.objective_values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            outcome.invariant("objective_monotone", monotone);
            match check_step_summability(&block_trace, rho, block_trace.last_value()) {
                Ok(r) => outcome.summability(&r),
                Err(e) => outcome.error = Some(e.to_string()),
            }
        }
    }
    outcome.trace = Some(sweeps);
    outcome
}

fn run_tenberge_cycle(config: &ExperimentConfig) -> Outcome {
    run_tenberge(config, config.viscosity)
}

fn run_tenberge_viscosity(config: &ExperimentConfig) -> Outcome {
    run_tenberge(config, Some(config.viscosity.unwrap_or(0.1)))
}

fn run_quad_small(config: &ExperimentConfig) -> Outcome {
    let q = Arc::new(quad_small(config.seed));
    let stop = match config.stop() {
        Ok(s) => s,
        Err(e) => return Outcome::errored(e),
    };
    let l = q.lipschitz();
    let factory = match QuadraticUpperBound::new(q.clone()) {
        Ok(f) => f,
        Err(e) => return Outcome::errored(e),
    };
    let x0 = RealVector::from_element(q.dim(), 1.0);
    let mut outcome = Outcome::new();
    let rho = config.viscosity.unwrap_or(0.0);
    let run = match config.viscosity {
        Some(r) => match wrap_viscosity(&factory, r) {
            Ok(w) => run_mm(q.as_ref(), &w, &x0, &stop, &config.options()),
            Err(e) => return Outcome::errored(e),
        },
        None => run_mm(q.as_ref(), &factory, &x0, &stop, &config.options()),
    };
    let Some(trace) = outcome.absorb(run) else {
        return outcome;
    };
    let (_, f_star) = q.known_minimum().expect("positive definite");
    // a viscous quadratic bound is the quadratic bound with curvature L + ρ
    let l_eff = l + rho;
    let result = (|| -> crate::error::Result<()> {
        let grads = gradient_norms(&trace, q.as_ref())?;
        outcome.bound(&check_sublinear_bound(&trace, &grads, l_eff, f_star)?);
        let rate = check_linear_rate(&trace, q.mu(), l_eff, f_star)?;
        outcome.bound(&rate.statement_form);
        outcome.bound(&rate.proof_chain_form);
        outcome.bound(&rate.per_step_form);
        outcome.diag("worst_observed_factor", json!(rate.worst_observed_factor));
        let summ = check_step_summability(&trace, l_eff, f_star)?;
        outcome.summability(&summ);
        let samples = seeded_samples(&RealVector::zeros(q.dim()), 100, 3.0, config.seed);
        outcome.bound(&check_pl_inequality(&samples, q.as_ref(), q.mu(), l, f_star)?);
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(e.to_string());
    }
    outcome.diag("optimality_gap", json!(trace.last_value() - f_star));
    outcome
}

fn run_lasso_desk(config: &ExperimentConfig) -> Outcome {
    let lasso = match LassoProblem::desk(config.seed) {
        Ok(l) => l,
        Err(e) => return Outcome::errored(e),
    };
    let alpha = config.alpha.unwrap_or(0.9 / lasso.lipschitz());
    let stop = match config.stop() {
        Ok(s) => s,
        Err(e) => return Outcome::errored(e),
    };
    let factory = match ProxGradFactory::new(lasso.composite.clone(), alpha, false) {
        Ok(f) => f,
        Err(e) => return Outcome::errored(e),
    };
    let x0 = RealVector::zeros(lasso.dim());
    let mut outcome = Outcome::new();
    let rho = config.viscosity.unwrap_or(0.0);
    let run = match config.viscosity {
        Some(r) => match wrap_viscosity(&factory, r) {
            Ok(w) => run_mm(lasso.composite.as_ref(), &w, &x0, &stop, &config.options()),
            Err(e) => return Outcome::errored(e),
        },
        None => run_mm(lasso.composite.as_ref(), &factory, &x0, &stop, &config.options()),
    };
    let Some(trace) = outcome.absorb(run) else {
        return outcome;
    };
    let reference = lasso.coordinate_descent(100_000);
    let f_ref = lasso.value(&reference);
    let f_limit = f_ref.min(trace.last_value());
    let result = (|| -> crate::error::Result<()> {
        let summ = check_step_summability(&trace, factory.surrogate_modulus() + rho, f_limit)?;
        outcome.summability(&summ);
        let bregman = BregmanFactory::prox_grad(lasso.composite.clone(), alpha)?;
        let summa = summa_along(
            lasso.composite.as_ref(),
            &bregman,
            &trace,
            50,
            |n| seeded_samples(&trace.iterates[n], 50, 1.0, config.seed + n as u64),
        )?;
        outcome.bound(&summa);
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(e.to_string());
    }
    outcome.diag("reference_objective", json!(f_ref));
    outcome.diag("objective_gap", json!(trace.last_value() - f_ref));
    outcome.diag("optimality_residual", json!(lasso.optimality_residual(trace.last_iterate())));
    outcome.diag("alpha", json!(alpha));
    outcome
}

/// SUMMA margins along the first `count` transitions of a trace, as one report.
pub fn summa_along(
    f: &dyn Objective,
    factory: &dyn SurrogateFactory,
    trace: &IterateTrace,
    count: usize,
    samples: impl Fn(usize) -> Vec<RealVector>,
) -> crate::error::Result<BoundReport> {
    let mut worst = Vec::new();
    for n in 0..trace.iterations().min(count) {
        let r = check_summa(f, factory, &trace.iterates[n], &trace.iterates[n + 1], &samples(n))?;
        worst.push(r.worst_margin);
    }
    Ok(BoundReport::from_margins("summa", worst, crate::bregman::SUMMA_TOL))
}

fn run_simplex_linear(config: &ExperimentConfig) -> Outcome {
    let objective = simplex_linear();
    let vertex = objective.argmin_vertex();
    let f: Arc<dyn Objective> = Arc::new(objective);
    let alpha = config.alpha.unwrap_or(0.1);
    let stop = match config.stop() {
        Ok(s) => s,
        Err(e) => return Outcome::errored(e),
    };
    let factory = match BregmanFactory::entropic_simplex(f.clone(), alpha) {
        Ok(fac) => fac,
        Err(e) => return Outcome::errored(e),
    };
    let d = 5;
    let x0 = RealVector::from_element(d, 1.0 / d as f64);
    let mut outcome = Outcome::new();
    let run = match config.viscosity {
        Some(r) => match wrap_viscosity(&factory, r) {
            Ok(w) => run_mm(f.as_ref(), &w, &x0, &stop, &config.options()),
            Err(e) => return Outcome::errored(e),
        },
        None => run_mm(f.as_ref(), &factory, &x0, &stop, &config.options()),
    };
    let Some(trace) = outcome.absorb(run) else {
        return outcome;
    };
    let sum_err = trace.iterates.iter().map(|x| (x.sum() - 1.0).abs()).fold(0.0, f64::max);
    let min_entry = trace.iterates.iter().map(|x| x.min()).fold(f64::INFINITY, f64::min);
    outcome.invariant("simplex_sum", sum_err <= 1e-12);
    outcome.invariant("strictly_positive", min_entry > 0.0);
    outcome.diag("max_sum_error", json!(sum_err));
    outcome.diag("min_entry", json!(min_entry));

    let psi = match NegativeEntropy::new(1.0) {
        Ok(p) => p,
        Err(e) => return Outcome::errored(e),
    };
    let mut agreement = 0.0f64;
    for w in trace.iterates.windows(2) {
        match mirror_descent_step(f.as_ref(), &psi, &KlSimplex, &w[0], alpha) {
            Ok(step) => {
                let md = RealVector::from_vec(step.point);
                agreement = agreement.max((&md - &w[1]).amax() / w[1].amax());
            }
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        }
    }
    outcome.invariant("mirror_descent_agreement", agreement <= 1e-10);
    outcome.diag("mirror_descent_max_relative_difference", json!(agreement));
    let mut e = RealVector::zeros(d);
    e[vertex] = 1.0;
    outcome.diag("distance_to_vertex_l1", json!((trace.last_iterate() - e).lp_norm(1)));
    match summa_along(f.as_ref(), &factory, &trace, 50, |n| {
        seeded_simplex_points(d, 50, config.seed + n as u64)
    }) {
        Ok(r) => outcome.bound(&r),
        Err(err) => outcome.error = Some(err.to_string()),
    }
    outcome
}

// ---- entry points ----

fn run_batch(registry: &Registry, args: &BatchArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let names: Vec<String> = if args.experiments.is_empty() {
        registry.names().into_iter().map(String::from).collect()
    } else {
        args.experiments.clone()
    };
    if let Some(bad) = names.iter().find(|n| registry.get(n).is_none()) {
        let _ = writeln!(err, "unknown experiment '{bad}'; try `list`");
        return EXIT_UNKNOWN_EXPERIMENT;
    }
    if std::fs::create_dir_all(&args.out_dir).is_err() {
        let _ = writeln!(err, "cannot create {}", args.out_dir.display());
        return EXIT_UNWRITABLE;
    }
    let ext = match args.format {
        Format::Json => "jsonl",
        Format::Csv => "csv",
    };
    let configs: Vec<ExperimentConfig> = names
        .iter()
        .map(|n| {
            let mut c = ExperimentConfig::from_solver(n, &args.solver, args.format);
            c.trace_out = Some(args.out_dir.join(format!("{n}.trace.{ext}")));
            c.report_out = Some(args.out_dir.join(format!("{n}.report.json")));
            c
        })
        .collect();

    let jobs = args.jobs.max(1);
    let mut results: Vec<(i32, Vec<u8>, Vec<u8>)> = Vec::with_capacity(configs.len());
    for chunk in configs.chunks(jobs) {
        let chunk_results: Vec<(i32, Vec<u8>, Vec<u8>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|c| {
                    scope.spawn(move || {
                        let (mut o, mut e) = (Vec::new(), Vec::new());
                        let code = cmd_run(registry, c, &mut o, &mut e);
                        (code, o, e)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or((EXIT_SOLVER_ERROR, Vec::new(), b"worker panicked\n".to_vec())))
                .collect()
        });
        results.extend(chunk_results);
    }
    let mut worst = EXIT_OK;
    for (code, o, e) in results {
        let _ = out.write_all(&o);
        let _ = err.write_all(&e);
        worst = worst.max(code);
    }
    worst
}

/// Parses `args` (including the program name) and executes the command.
pub fn run_cli<I, T>(args: I, registry: &Registry, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
            } else {
                let _ = out.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    match cli.command {
        Command::List => cmd_list(registry, out),
        Command::Run(args) => {
            let mut config = ExperimentConfig::from_solver(&args.experiment, &args.solver, args.format);
            config.trace_out = args.trace_out;
            config.report_out = args.report_out;
            cmd_run(registry, &config, out, err)
        }
        Command::Batch(args) => run_batch(registry, &args, out, err),
    }
}

pub fn main_from_env() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli(std::env::args_os(), &Registry::standard(), &mut stdout.lock(), &mut stderr.lock())
}
