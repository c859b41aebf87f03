//! Standard and overrelaxed Sinkhorn sweeps in the log domain.
//!
//! One sweep with relaxation weight `ω` performs
//!
//! ```text
//! log u ← (1 − ω) log u + ω (log a − log K exp(log v))
//! log v ← (1 − ω) log v + ω (log b − log Kᵀ exp(log u))
//! ```
//!
//! so `ω = 1` is the classical alternating scaling. Residuals are measured once
//! per sweep, after the `v` update.

use std::time::Instant;

use crate::adaptive::{OmegaSchedule, RelaxationController, RelaxationPolicy};
use crate::compositional::{PositiveKernel, PositiveVector};
use crate::error::{invalid, Error, Result};
use crate::kernel_ops::{log_matvec, log_sum_exp, Side};
use crate::par::Execution;
use crate::problem::{log_bilinear, plan_l1_error, ScalingState, TransportPlan, TransportProblem};
use crate::trace::{ConvergenceTrace, TraceRecord};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// A residual this many times above the first one is treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub policy: RelaxationPolicy,
    /// Threshold on the larger ℓ1 marginal residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Reference plan for the `plan_error` trace column.
    pub reference: Option<TransportPlan>,
    /// Record wall time per sweep. Off by default so traces are reproducible.
    pub record_timing: bool,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            policy: RelaxationPolicy::Fixed { omega: 1.0 },
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            reference: None,
            record_timing: false,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_policy(policy: RelaxationPolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn reference(mut self, plan: TransportPlan) -> Self {
        self.reference = Some(plan);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminationReason {
    Converged,
    IterationLimit,
    NumericalFailure { iteration: usize, reason: String },
}

impl TerminationReason {
    pub fn label(&self) -> &'static str {
        match self {
            TerminationReason::Converged => "converged",
            TerminationReason::IterationLimit => "iteration-limit",
            TerminationReason::NumericalFailure { .. } => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: ScalingState,
    pub trace: ConvergenceTrace,
    pub reason: TerminationReason,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.reason == TerminationReason::Converged
    }

    pub fn iterations(&self) -> usize {
        self.state.iteration
    }

    pub fn plan(&self, kernel: &PositiveKernel) -> Result<TransportPlan> {
        TransportPlan::from_state(&self.state, kernel)
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(invalid(format!("omega must lie in (0, 2), got {omega}")));
    }
    Ok(())
}

/// Sweep state with cached `log K exp(log v)` and `log Kᵀ exp(log u)`, so a
/// sweep plus its residuals costs two kernel products.
struct Sweeper<'p> {
    problem: &'p TransportProblem,
    exec: Execution,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    state: ScalingState,
    log_kv: Vec<f64>,
    log_ktu: Vec<f64>,
}

impl<'p> Sweeper<'p> {
    fn new(problem: &'p TransportProblem, state: ScalingState, exec: Execution) -> Result<Self> {
        state.check_dims(problem.kernel())?;
        if !state.is_finite() {
            return Err(invalid("initial state has non-finite entries"));
        }
        let mut s = Self {
            problem,
            exec,
            log_a: problem.a().ln(),
            log_b: problem.b().ln(),
            log_kv: vec![0.0; problem.rows()],
            log_ktu: vec![0.0; problem.cols()],
            state,
        };
        log_matvec(problem.kernel(), Side::Kernel, &s.state.log_v, &mut s.log_kv, exec);
        log_matvec(problem.kernel(), Side::Transpose, &s.state.log_u, &mut s.log_ktu, exec);
        Ok(s)
    }

    fn sweep(&mut self, omega: f64) -> Result<()> {
        let kernel = self.problem.kernel();
        let keep = 1.0 - omega;
        let iteration = self.state.iteration + 1;
        for ((lu, la), lkv) in self.state.log_u.iter_mut().zip(&self.log_a).zip(&self.log_kv) {
            *lu = keep * *lu + omega * (la - lkv);
        }
        log_matvec(kernel, Side::Transpose, &self.state.log_u, &mut self.log_ktu, self.exec);
        for ((lv, lb), lktu) in self.state.log_v.iter_mut().zip(&self.log_b).zip(&self.log_ktu) {
            *lv = keep * *lv + omega * (lb - lktu);
        }
        log_matvec(kernel, Side::Kernel, &self.state.log_v, &mut self.log_kv, self.exec);
        self.state.iteration = iteration;
        if !self.state.is_finite() || !self.log_kv.iter().chain(&self.log_ktu).all(|x| x.is_finite()) {
            return Err(Error::NumericalFailure {
                iteration,
                reason: "non-finite scaling".into(),
            });
        }
        Ok(())
    }

    /// `(‖P1 − a‖₁, ‖Pᵀ1 − b‖₁)` of the current plan.
    fn residuals(&self) -> (f64, f64) {
        let l1 = |log_x: &[f64], log_k: &[f64], target: &[f64]| -> f64 {
            log_x
                .iter()
                .zip(log_k)
                .zip(target)
                .map(|((x, k), t)| ((x + k).exp() - t).abs())
                .sum()
        };
        (
            l1(&self.state.log_u, &self.log_kv, self.problem.a().as_slice()),
            l1(&self.state.log_v, &self.log_ktu, self.problem.b().as_slice()),
        )
    }
}

/// One relaxed sweep. `ω = 1` is the standard Sinkhorn update.
pub fn sor_step(state: &ScalingState, problem: &TransportProblem, omega: f64) -> Result<ScalingState> {
    check_omega(omega)?;
    let mut sweeper = Sweeper::new(problem, state.clone(), Execution::default())?;
    sweeper.sweep(omega)?;
    Ok(sweeper.state)
}

/// `‖P1 − a‖₁`.
pub fn marginal_residual(plan: &TransportPlan, a: &[f64]) -> Result<f64> {
    if plan.rows() != a.len() {
        return Err(Error::DimensionMismatch {
            what: "row marginal",
            expected: plan.rows(),
            actual: a.len(),
        });
    }
    Ok(plan.row_sums().iter().zip(a).map(|(s, t)| (s - t).abs()).sum())
}

/// `diag(u) K diag(v)`, built from log-entries.
pub fn transport_plan(state: &ScalingState, kernel: &PositiveKernel) -> Result<TransportPlan> {
    TransportPlan::from_state(state, kernel)
}

/// Representatives `(u⁺, v⁺)` of the classes of `(u, v)` that solve the
/// scaling equations exactly at a fixed point: both are first scaled to unit
/// sum, then divided by `√(uᵀKv)`.
pub fn normalize_representatives(state: &ScalingState, kernel: &PositiveKernel) -> Result<(PositiveVector, PositiveVector)> {
    state.check_dims(kernel)?;
    if !state.is_finite() {
        return Err(invalid("state has non-finite entries"));
    }
    let unit = |x: &[f64]| -> Vec<f64> {
        let lse = log_sum_exp(x.iter().copied());
        x.iter().map(|v| v - lse).collect()
    };
    let lu = unit(&state.log_u);
    let lv = unit(&state.log_v);
    let half_log_lambda = 0.5 * log_bilinear(kernel, &lu, &lv);
    let u = lu.iter().map(|x| (x - half_log_lambda).exp()).collect();
    let v = lv.iter().map(|x| (x - half_log_lambda).exp()).collect();
    Ok((PositiveVector::new(u)?, PositiveVector::new(v)?))
}

/// Initial state for a start vector `v₀`: `u₀ = a / (K v₀)`.
pub fn initial_state(problem: &TransportProblem, initial_log_v: Option<&[f64]>) -> Result<ScalingState> {
    let log_v = match initial_log_v {
        Some(v) => {
            if v.len() != problem.cols() {
                return Err(Error::DimensionMismatch {
                    what: "initial log_v",
                    expected: problem.cols(),
                    actual: v.len(),
                });
            }
            v.to_vec()
        }
        None => vec![0.0; problem.cols()],
    };
    let mut log_kv = vec![0.0; problem.rows()];
    log_matvec(problem.kernel(), Side::Kernel, &log_v, &mut log_kv, Execution::default());
    let log_u = problem.a().ln().iter().zip(&log_kv).map(|(a, k)| a - k).collect();
    ScalingState::new(log_u, log_v)
}

/// Runs sweeps from `v₀` (`log v₀ = 0` when `None`) until the larger marginal
/// residual drops below `tol`, the iteration limit is hit, or the iterates
/// blow up.
pub fn solve(problem: &TransportProblem, config: &SolverConfig, initial_log_v: Option<&[f64]>) -> Result<SolveOutcome> {
    let start = initial_state(problem, initial_log_v)?;
    solve_from(problem, config, start)
}

/// As [`solve`], from an explicit `(u₀, v₀)`.
pub fn solve_from(problem: &TransportProblem, config: &SolverConfig, start: ScalingState) -> Result<SolveOutcome> {
    config.validate()?;
    let mut schedule = RelaxationController::new(config.policy.clone());
    solve_with_schedule(problem, config, start, &mut schedule)
}

/// As [`solve_from`], with a caller-supplied relaxation schedule.
pub fn solve_with_schedule(
    problem: &TransportProblem,
    config: &SolverConfig,
    start: ScalingState,
    schedule: &mut dyn OmegaSchedule,
) -> Result<SolveOutcome> {
    if !(config.tol > 0.0) || config.max_iter == 0 {
        return Err(invalid("tol and max_iter must be positive"));
    }
    if let Some(reference) = &config.reference {
        if reference.rows() != problem.rows() || reference.cols() != problem.cols() {
            return Err(Error::DimensionMismatch {
                what: "reference plan",
                expected: problem.rows() * problem.cols(),
                actual: reference.rows() * reference.cols(),
            });
        }
    }
    let clock = Instant::now();
    let mut sweeper = Sweeper::new(problem, start, config.execution)?;
    let mut trace = ConvergenceTrace::new();
    let mut initial_residual = None;

    let reason = loop {
        if sweeper.state.iteration >= config.max_iter {
            break TerminationReason::IterationLimit;
        }
        let decision = schedule.next_omega(&trace, &sweeper.state, problem.kernel());
        if let Some(event) = decision.event {
            trace.push_event(event);
        }
        let omega = decision.omega;
        if let Err(err) = check_omega(omega).and_then(|_| sweeper.sweep(omega)) {
            break TerminationReason::NumericalFailure {
                iteration: sweeper.state.iteration + 1,
                reason: err.to_string(),
            };
        }
        let (residual_a, residual_b) = sweeper.residuals();
        let iteration = sweeper.state.iteration;
        if !(residual_a.is_finite() && residual_b.is_finite()) {
            break TerminationReason::NumericalFailure {
                iteration,
                reason: "non-finite residual".into(),
            };
        }
        let plan_error = config
            .reference
            .as_ref()
            .map(|r| plan_l1_error(&sweeper.state, problem.kernel(), r));
        trace.push(TraceRecord {
            iteration,
            omega,
            residual_a,
            residual_b,
            plan_error,
            elapsed_seconds: config.record_timing.then(|| clock.elapsed().as_secs_f64()),
        })?;

        let worst = residual_a.max(residual_b);
        let first = *initial_residual.get_or_insert(worst);
        if worst < config.tol {
            break TerminationReason::Converged;
        }
        if worst > DIVERGENCE_FACTOR * first {
            break TerminationReason::NumericalFailure {
                iteration,
                reason: format!("residual {worst:e} exceeds {DIVERGENCE_FACTOR:e} times the first residual"),
            };
        }
    };

    Ok(SolveOutcome {
        state: sweeper.state,
        trace,
        reason,
    })
}
