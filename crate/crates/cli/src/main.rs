//! `sor-sinkhorn`: solve, analyze, sweep and experiment subcommands.
//!
//! Standard output carries `key=value` lines, starting with an echo of every
//! effective parameter. Exit status: 0 converged, 2 iteration limit,
//! 3 numerical failure, 4 input or validation error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sor_sinkhorn::adaptive::{RelaxationPolicy, DEFAULT_LOOKBACK, DEFAULT_OMEGA_CAP, DEFAULT_RESIDUAL_WARMUP, DEFAULT_SVD_WARMUP};
use sor_sinkhorn::generate::{ExperimentSpec, Family, MarginalKind};
use sor_sinkhorn::io::{self, fmt_human};
use sor_sinkhorn::solver::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use sor_sinkhorn::workflows::{self, ExperimentConfig};
use sor_sinkhorn::{solve, SolverConfig, TerminationReason, TraceEvent, TransportProblem};

const EXIT_CONVERGED: u8 = 0;
const EXIT_ITERATION_LIMIT: u8 = 2;
const EXIT_NUMERICAL_FAILURE: u8 = 3;
const EXIT_INPUT_ERROR: u8 = 4;

/// Residual level reported per strategy in experiment summaries.
const REPORT_TOL: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "sor-sinkhorn", version, about = "Overrelaxed Sinkhorn solver and rate analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a problem given as CSV files.
    Solve(SolveArgs),
    /// Contraction ratio, a-priori bounds and local rates of a problem.
    Analyze(AnalyzeArgs),
    /// One solve per relaxation weight, measured against the predicted rate.
    Sweep(SweepArgs),
    /// Compare relaxation strategies on a generated problem.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct ProblemFiles {
    /// Kernel CSV; a `<name>.log.<ext>` companion with log-entries is used when present.
    #[arg(long)]
    kernel: PathBuf,
    /// Row marginal, one value per line.
    #[arg(long)]
    a: PathBuf,
    /// Column marginal, one value per line.
    #[arg(long)]
    b: PathBuf,
}

impl ProblemFiles {
    fn load(&self) -> Result<TransportProblem> {
        let kernel = io::load_kernel(&self.kernel).with_context(|| format!("--kernel {}", self.kernel.display()))?;
        let a = io::load_probability_vector(&self.a).with_context(|| format!("--a {}", self.a.display()))?;
        let b = io::load_probability_vector(&self.b).with_context(|| format!("--b {}", self.b.display()))?;
        Ok(TransportProblem::new(kernel, a, b).context("--kernel/--a/--b")?)
    }

    fn echo(&self) {
        kv("kernel", self.kernel.display());
        kv("a", self.a.display());
        kv("b", self.b.display());
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PolicyKind {
    Fixed,
    AdaptiveResidual,
    AdaptiveSvd,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    files: ProblemFiles,
    /// Relaxation weight of the fixed policy, in (0, 2).
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    #[arg(long, value_enum, default_value_t = PolicyKind::Fixed)]
    policy: PolicyKind,
    /// Standard sweeps before an adaptive switch (20 residual, 50 svd by default).
    #[arg(long)]
    warmup: Option<usize>,
    /// Look-back of the residual-ratio estimate.
    #[arg(long, default_value_t = DEFAULT_LOOKBACK)]
    p: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the final plan as CSV.
    #[arg(long = "plan-out")]
    plan_out: Option<PathBuf>,
    /// Record wall time per sweep in the trace.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    files: ProblemFiles,
    /// Converged plan; solved with the standard method when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GeneratedProblem {
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Marginals of generated problems (family default when omitted).
    #[arg(long, value_enum)]
    marginals: Option<MarginalArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FamilyArg {
    Rgb,
    Grid1d,
    Random,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Rgb => Family::RgbGaussian,
            FamilyArg::Grid1d => Family::Grid1d,
            FamilyArg::Random => Family::RandomDense,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MarginalArg {
    Uniform,
    Random,
}

impl From<MarginalArg> for MarginalKind {
    fn from(m: MarginalArg) -> Self {
        match m {
            MarginalArg::Uniform => MarginalKind::Uniform,
            MarginalArg::Random => MarginalKind::Random,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[command(flatten)]
    generated: GeneratedProblem,
    /// Relaxation weights as `start:step:end` (inclusive) or a single value.
    #[arg(long)]
    omegas: String,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Sweep CSV output; printed to standard output instead of the summary when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Rgb)]
    family: FamilyArg,
    #[arg(long, default_value_t = 1000)]
    size: usize,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    marginals: Option<MarginalArg>,
    /// Comma-separated from standard, fixed[:ω], opt, adaptive-residual, adaptive-svd; or `all`.
    #[arg(long, default_value = "all")]
    strategies: String,
    /// Output directory for traces and the summary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 50_000)]
    max_iter: usize,
    /// Warm-up of the residual-adaptive strategy.
    #[arg(long, default_value_t = DEFAULT_RESIDUAL_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = DEFAULT_LOOKBACK)]
    p: usize,
    /// Warm-up of the SVD-adaptive strategy.
    #[arg(long = "svd-warmup", default_value_t = DEFAULT_SVD_WARMUP)]
    svd_warmup: usize,
    #[arg(long)]
    timing: bool,
}

fn kv(key: &str, value: impl std::fmt::Display) {
    println!("{key}={value}");
}

fn exit_code(reason: &TerminationReason) -> u8 {
    match reason {
        TerminationReason::Converged => EXIT_CONVERGED,
        TerminationReason::IterationLimit => EXIT_ITERATION_LIMIT,
        TerminationReason::NumericalFailure { .. } => EXIT_NUMERICAL_FAILURE,
    }
}

fn check_distinct(paths: &[(&str, Option<&Path>)]) -> Result<()> {
    let given: Vec<_> = paths.iter().filter_map(|(n, p)| p.map(|p| (n, p))).collect();
    for (i, (ni, pi)) in given.iter().enumerate() {
        for (nj, pj) in &given[i + 1..] {
            if pi == pj {
                bail!("{ni} and {nj} name the same path {}", pi.display());
            }
        }
    }
    Ok(())
}

fn policy_from(args: &SolveArgs) -> RelaxationPolicy {
    match args.policy {
        PolicyKind::Fixed => RelaxationPolicy::fixed(args.omega),
        PolicyKind::AdaptiveResidual => RelaxationPolicy::AdaptiveResidual {
            warmup: args.warmup.unwrap_or(DEFAULT_RESIDUAL_WARMUP),
            p: args.p,
            omega_cap: DEFAULT_OMEGA_CAP,
        },
        PolicyKind::AdaptiveSvd => RelaxationPolicy::AdaptiveSvd {
            warmup: args.warmup.unwrap_or(DEFAULT_SVD_WARMUP),
            omega_cap: DEFAULT_OMEGA_CAP,
        },
    }
}

fn echo_policy(policy: &RelaxationPolicy) {
    kv("policy", policy.kind());
    match *policy {
        RelaxationPolicy::Fixed { omega } => kv("omega", fmt_human(omega)),
        RelaxationPolicy::AdaptiveResidual { warmup, p, omega_cap } => {
            kv("warmup", warmup);
            kv("p", p);
            kv("omega_cap", fmt_human(omega_cap));
        }
        RelaxationPolicy::AdaptiveSvd { warmup, omega_cap } => {
            kv("warmup", warmup);
            kv("omega_cap", fmt_human(omega_cap));
        }
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<u8> {
    check_distinct(&[
        ("--kernel", Some(&args.files.kernel)),
        ("--a", Some(&args.files.a)),
        ("--b", Some(&args.files.b)),
        ("--trace", args.trace.as_deref()),
        ("--plan-out", args.plan_out.as_deref()),
    ])?;
    let policy = policy_from(args);
    let mut config = SolverConfig::with_policy(policy.clone()).tol(args.tol).max_iter(args.max_iter);
    config.record_timing = args.timing;
    config.validate()?;
    let problem = args.files.load()?;

    kv("command", "solve");
    args.files.echo();
    echo_policy(&policy);
    kv("tol", fmt_human(args.tol));
    kv("max_iter", args.max_iter);
    kv("trace", args.trace.as_ref().map_or("none".into(), |p| p.display().to_string()));
    kv("timing", args.timing);

    let out = solve(&problem, &config, None)?;
    if let Some(path) = &args.trace {
        io::save_trace(path, &out.trace)?;
    }
    if let Some(path) = &args.plan_out {
        io::save_plan(path, &out.plan(problem.kernel())?)?;
    }
    for event in out.trace.events() {
        match event {
            TraceEvent::Switched { iteration, theta_sq_estimate, omega } => {
                kv("switch_iteration", iteration);
                kv("theta_sq_estimate", fmt_human(*theta_sq_estimate));
                kv("switch_omega", fmt_human(*omega));
            }
            TraceEvent::Fallback { iteration, reason } => {
                kv("fallback_iteration", iteration);
                kv("fallback_reason", reason);
            }
        }
    }
    kv("termination", out.reason.label());
    if let TerminationReason::NumericalFailure { iteration, reason } = &out.reason {
        kv("failure_iteration", iteration);
        kv("failure_reason", reason);
    }
    kv("iterations", out.iterations());
    if let Some(last) = out.trace.last() {
        kv("residual_a", fmt_human(last.residual_a));
        kv("residual_b", fmt_human(last.residual_b));
    }
    Ok(exit_code(&out.reason))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<u8> {
    let problem = args.files.load()?;
    let plan = match &args.plan {
        Some(p) => Some(io::load_plan(p).with_context(|| format!("--plan {}", p.display()))?),
        None => None,
    };
    kv("command", "analyze");
    args.files.echo();
    kv("plan", args.plan.as_ref().map_or("none".into(), |p| p.display().to_string()));
    let report = workflows::analyze(&problem, plan.as_ref())?;
    for (k, v) in report.key_values() {
        kv(k, v);
    }
    if report.delta.is_err() {
        eprintln!("note: the lower bound delta needs a kernel of full rank; the remaining quantities are still valid");
    }
    if report.delta_check() == Some(false) || !report.lambda_check() {
        eprintln!("error: theta_sq lies outside [delta, lambda^2]");
        return Ok(EXIT_NUMERICAL_FAILURE);
    }
    Ok(EXIT_CONVERGED)
}

fn experiment_spec(g: &GeneratedProblem) -> Result<ExperimentSpec> {
    let Some(family) = g.family else {
        bail!("give either --kernel/--a/--b or --family");
    };
    let mut spec = ExperimentSpec::new(family.into(), g.size.unwrap_or(30), g.eps.unwrap_or(0.1), g.seed.unwrap_or(0));
    if let Some(m) = g.marginals {
        spec.marginals = m.into();
    }
    spec.validate()?;
    Ok(spec)
}

fn echo_spec(spec: &ExperimentSpec) {
    kv("family", spec.family);
    kv("size", spec.size_m);
    kv("eps", fmt_human(spec.epsilon));
    kv("seed", spec.seed);
    kv("marginals", spec.marginals.name());
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let omegas = workflows::parse_omega_grid(&args.omegas).context("--omegas")?;
    let from_files = [&args.kernel, &args.a, &args.b];
    let problem_source = if from_files.iter().all(|p| p.is_some()) {
        if args.generated.family.is_some() {
            bail!("--family cannot be combined with --kernel/--a/--b");
        }
        let files = ProblemFiles {
            kernel: args.kernel.clone().unwrap(),
            a: args.a.clone().unwrap(),
            b: args.b.clone().unwrap(),
        };
        Ok(files)
    } else if from_files.iter().any(|p| p.is_some()) {
        bail!("--kernel, --a and --b must be given together");
    } else {
        Err(experiment_spec(&args.generated)?)
    };
    let problem = match &problem_source {
        Ok(files) => files.load()?,
        Err(spec) => spec.build()?,
    };
    let report = workflows::sweep(&problem, &omegas, args.tol, args.max_iter)?;

    let mut csv = String::from("omega,iterations,measured_rate,predicted_rho,termination\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_human(row.omega),
            row.iterations,
            row.measured_rate.map_or(String::new(), fmt_human),
            fmt_human(row.predicted_rate),
            row.reason.label()
        ));
    }
    let Some(out) = &args.out else {
        std::io::stdout().write_all(csv.as_bytes())?;
        return Ok(EXIT_CONVERGED);
    };
    fs::write(out, csv).with_context(|| format!("--out {}", out.display()))?;
    kv("command", "sweep");
    match &problem_source {
        Ok(files) => files.echo(),
        Err(spec) => echo_spec(spec),
    }
    kv("omegas", &args.omegas);
    kv("tol", fmt_human(args.tol));
    kv("max_iter", args.max_iter);
    kv("out", out.display());
    kv("theta_sq", fmt_human(report.theta_sq));
    kv("rows", report.rows.len());
    if let Some(best) = report
        .rows
        .iter()
        .filter(|r| r.reason == TerminationReason::Converged)
        .min_by_key(|r| r.iterations)
    {
        kv("best_omega", fmt_human(best.omega));
        kv("best_iterations", best.iterations);
    }
    Ok(EXIT_CONVERGED)
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<u8> {
    let mut spec = ExperimentSpec::new(args.family.into(), args.size, args.eps, args.seed);
    if let Some(m) = args.marginals {
        spec.marginals = m.into();
    }
    spec.validate()?;
    let mut config = ExperimentConfig::new(spec);
    config.strategies = workflows::parse_strategies(&args.strategies).context("--strategies")?;
    config.tol = args.tol;
    config.max_iter = args.max_iter;
    config.residual_warmup = args.warmup;
    config.lookback = args.p;
    config.svd_warmup = args.svd_warmup;
    config.record_timing = args.timing;
    RelaxationPolicy::adaptive_residual(args.warmup, args.p).validate()?;
    RelaxationPolicy::adaptive_svd(args.svd_warmup).validate()?;
    fs::create_dir_all(&args.out).with_context(|| format!("--out {}", args.out.display()))?;

    kv("command", "experiment");
    echo_spec(&config.spec);
    kv("strategies", config.strategies.iter().map(|s| s.label()).collect::<Vec<_>>().join(","));
    kv("tol", fmt_human(config.tol));
    kv("max_iter", config.max_iter);
    kv("warmup", config.residual_warmup);
    kv("p", config.lookback);
    kv("svd_warmup", config.svd_warmup);
    kv("timing", config.record_timing);
    kv("out", args.out.display());

    let report = workflows::run_experiment(&config)?;
    kv("reference_theta_sq", fmt_human(report.reference.theta_sq));
    kv("reference_omega_opt", fmt_human(report.reference.omega_opt));
    kv("reference_iterations", report.reference.iterations);
    kv("reference_residual", fmt_human(report.reference.final_residual));

    let mut summary = String::from("strategy,termination,iterations,iterations_to_1e-8,final_omega,residual_a,residual_b,plan_error\n");
    let mut worst = EXIT_CONVERGED;
    for run in &report.runs {
        let label = run.strategy.label();
        io::save_trace(&args.out.join(format!("trace-{label}.csv")), &run.outcome.trace)?;
        let last = run.outcome.trace.last();
        let opt = |x: Option<f64>| x.map_or(String::new(), fmt_human);
        let to_report = run.iterations_to(REPORT_TOL);
        summary.push_str(&format!(
            "{label},{},{},{},{},{},{},{}\n",
            run.outcome.reason.label(),
            run.outcome.iterations(),
            to_report.map_or(String::new(), |i| i.to_string()),
            opt(run.final_omega()),
            opt(last.map(|r| r.residual_a)),
            opt(last.map(|r| r.residual_b)),
            opt(last.and_then(|r| r.plan_error)),
        ));
        kv(&format!("{label}.termination"), run.outcome.reason.label());
        kv(&format!("{label}.iterations"), run.outcome.iterations());
        kv(&format!("{label}.iterations_to_1e-8"), to_report.map_or("none".into(), |i| i.to_string()));
        worst = worst.max(exit_code(&run.outcome.reason));
    }
    let summary_path = args.out.join("summary.csv");
    fs::write(&summary_path, summary).with_context(|| format!("writing {}", summary_path.display()))?;
    kv("summary", summary_path.display());
    Ok(worst)
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT_ERROR } else { EXIT_CONVERGED };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}
