//! Multi-step workflows built from the solver and the analysis tools: a full
//! rate analysis of one problem, `ω` sweeps, and relaxation-strategy
//! comparisons against a reference solution.

use std::fmt;
use std::str::FromStr;

use crate::adaptive::{RelaxationPolicy, DEFAULT_LOOKBACK, DEFAULT_RESIDUAL_WARMUP, DEFAULT_SVD_WARMUP};
use crate::bounds::{BoundsReport, DeltaBound};
use crate::error::{invalid, Error, Result};
use crate::generate::ExperimentSpec;
use crate::io::fmt_human;
use crate::par;
use crate::problem::{TransportPlan, TransportProblem};
use crate::solver::{solve, solve_from, SolveOutcome, SolverConfig, TerminationReason};
use crate::spectral::{omega_opt, rho, theta_squared};

/// Tolerance of the standard solve that precedes an analysis without a plan.
pub const ANALYSIS_TOL: f64 = 1e-10;
pub const ANALYSIS_MAX_ITER: usize = 200_000;
/// Absolute slack in the `δ ≤ θ² ≤ Λ²` checks, matching the accuracy of `θ²`
/// from a plan with marginal residual `1e−8`.
pub const CHECK_SLACK: f64 = 1e-8;
/// Number of trailing residual ratios in a measured tail rate.
pub const TAIL_WINDOW: usize = 20;
/// Residuals at or below this level are roundoff and excluded from rates.
pub const TAIL_FLOOR: f64 = 1e-13;
pub const REFERENCE_TOL: f64 = 1e-12;
/// A reference run that stalls above [`REFERENCE_TOL`] is still accepted
/// below this residual.
pub const REFERENCE_ACCEPT: f64 = 1e-10;
pub const PILOT_TOL: f64 = 1e-10;
pub const DEFAULT_FIXED_OMEGA: f64 = 1.5;

/// Data-only bounds plus the local rate quantities of the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub log_eta: f64,
    pub eta: f64,
    pub lambda: f64,
    pub global_omega_upper: f64,
    /// `Err` when the kernel is numerically rank deficient.
    pub delta: std::result::Result<DeltaBound, Error>,
    pub theta_sq: f64,
    pub omega_opt: f64,
    pub rho_opt: f64,
    /// Upper end of `(1, 1 + θ²)`; `None` when `θ² = 0`.
    pub feasible_upper: Option<f64>,
    /// Sweeps of the preliminary solve, if one was run.
    pub solve_iterations: Option<usize>,
}

impl AnalysisReport {
    /// `θ² ≥ δ`, or `None` when `δ` is unavailable.
    pub fn delta_check(&self) -> Option<bool> {
        self.delta
            .as_ref()
            .ok()
            .map(|d| self.theta_sq + CHECK_SLACK >= d.delta)
    }

    /// `θ² ≤ Λ²`.
    pub fn lambda_check(&self) -> bool {
        self.theta_sq <= self.lambda * self.lambda + CHECK_SLACK
    }

    /// `key=value` pairs in a fixed order.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let mut kv = vec![
            ("eta", fmt_human(self.eta)),
            ("log_eta", fmt_human(self.log_eta)),
            ("lambda", fmt_human(self.lambda)),
            ("global_omega_upper", fmt_human(self.global_omega_upper)),
        ];
        match &self.delta {
            Ok(d) => {
                kv.push(("delta1", fmt_human(d.delta_1)));
                kv.push(("delta2", fmt_human(d.delta_2)));
                kv.push(("delta", fmt_human(d.delta)));
                kv.push(("sigma_min", fmt_human(d.sigma_min)));
            }
            Err(e) => {
                kv.push(("delta1", "unavailable".into()));
                kv.push(("delta2", "unavailable".into()));
                kv.push(("delta", "unavailable".into()));
                kv.push(("delta_error", e.to_string()));
            }
        }
        kv.push(("theta_sq", fmt_human(self.theta_sq)));
        kv.push(("omega_opt", fmt_human(self.omega_opt)));
        kv.push(("rho_opt", fmt_human(self.rho_opt)));
        kv.push((
            "feasible_upper",
            self.feasible_upper.map_or("none".into(), |x| fmt_human(x)),
        ));
        kv.push((
            "check_theta_sq_ge_delta",
            self.delta_check().map_or("unavailable".into(), |b| b.to_string()),
        ));
        kv.push(("check_theta_sq_le_lambda_sq", self.lambda_check().to_string()));
        if let Some(it) = self.solve_iterations {
            kv.push(("solve_iterations", it.to_string()));
        }
        kv
    }
}

/// Bounds and rates for `problem`. Without a plan, the standard method is run
/// to [`ANALYSIS_TOL`] first.
pub fn analyze(problem: &TransportProblem, plan: Option<&TransportPlan>) -> Result<AnalysisReport> {
    let bounds = BoundsReport::compute(problem);
    let (plan, solve_iterations) = match plan {
        Some(p) => (p.clone(), None),
        None => {
            let config = SolverConfig::default().tol(ANALYSIS_TOL).max_iter(ANALYSIS_MAX_ITER);
            let out = solve(problem, &config, None)?;
            if let TerminationReason::NumericalFailure { iteration, reason } = out.reason {
                return Err(Error::NumericalFailure { iteration, reason });
            }
            (out.plan(problem.kernel())?, Some(out.iterations()))
        }
    };
    let theta_sq = theta_squared(&plan, problem.a(), problem.b())?;
    let w = omega_opt(theta_sq.sqrt())?;
    Ok(AnalysisReport {
        log_eta: bounds.log_eta,
        eta: bounds.log_eta.exp(),
        lambda: bounds.lambda,
        global_omega_upper: bounds.global_upper,
        delta: bounds.delta,
        theta_sq,
        omega_opt: w,
        rho_opt: w - 1.0,
        feasible_upper: (theta_sq > 0.0).then_some(1.0 + theta_sq),
        solve_iterations,
    })
}

/// `start:step:end` with inclusive end, or a single value.
pub fn parse_omega_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| invalid(format!("cannot parse '{s}' in omega grid '{text}'")))
    };
    let grid = match parts.as_slice() {
        [single] => vec![num(single)?],
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if !(step > 0.0) || end < start {
                return Err(invalid(format!(
                    "omega grid '{text}' needs a positive step and end >= start"
                )));
            }
            let count = ((end - start) / step + 1e-9).floor() as usize;
            // rounded so that decimal grids print as typed
            (0..=count)
                .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
                .collect()
        }
        _ => return Err(invalid(format!("omega grid '{text}' is not of the form start:step:end"))),
    };
    if let Some(w) = grid.iter().find(|w| !(**w > 0.0 && **w < 2.0)) {
        return Err(invalid(format!("omega {w} outside (0, 2)")));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub omega: f64,
    pub iterations: usize,
    /// Geometric mean of the last [`TAIL_WINDOW`] residual ratios.
    pub measured_rate: Option<f64>,
    pub predicted_rate: f64,
    pub reason: TerminationReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub theta_sq: f64,
    pub rows: Vec<SweepRow>,
}

/// One solve per `ω`, compared with `ρ_θ(ω)` for the `θ` of a reference
/// solution. Runs are independent; rows keep the order of `omegas`.
pub fn sweep(problem: &TransportProblem, omegas: &[f64], tol: f64, max_iter: usize) -> Result<SweepReport> {
    if omegas.is_empty() {
        return Err(invalid("empty omega grid"));
    }
    let reference = reference_solution(problem, max_iter)?;
    let theta = reference.theta_sq.sqrt();
    let rows = par::map_indexed(omegas.len(), |k| -> Result<SweepRow> {
        let omega = omegas[k];
        let config = SolverConfig::with_policy(RelaxationPolicy::fixed(omega))
            .tol(tol)
            .max_iter(max_iter);
        let out = solve(problem, &config, None)?;
        Ok(SweepRow {
            omega,
            iterations: out.iterations(),
            measured_rate: out.trace.tail_rate(TAIL_WINDOW, TAIL_FLOOR),
            predicted_rate: rho(theta, omega)?,
            reason: out.reason,
        })
    });
    Ok(SweepReport {
        theta_sq: reference.theta_sq,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// High-accuracy solution used as ground truth.
#[derive(Debug, Clone)]
pub struct Reference {
    pub plan: TransportPlan,
    pub theta_sq: f64,
    pub omega_opt: f64,
    /// Sweeps of the pilot and the `ω^opt` run together.
    pub iterations: usize,
    pub final_residual: f64,
}

/// Pilot run with the SVD-adaptive policy to [`PILOT_TOL`], `θ²` from its
/// plan, then an `ω^opt` run from the pilot state to [`REFERENCE_TOL`].
pub fn reference_solution(problem: &TransportProblem, max_iter: usize) -> Result<Reference> {
    let pilot_config = SolverConfig::with_policy(RelaxationPolicy::adaptive_svd(DEFAULT_SVD_WARMUP))
        .tol(PILOT_TOL)
        .max_iter(max_iter);
    let pilot = solve(problem, &pilot_config, None)?;
    if !pilot.converged() {
        return Err(invalid(format!(
            "reference pilot did not converge ({} after {} sweeps)",
            pilot.reason.label(),
            pilot.iterations()
        )));
    }
    let theta_sq = theta_squared(&pilot.plan(problem.kernel())?, problem.a(), problem.b())?;
    let w = omega_opt(theta_sq.sqrt())?;
    let config = SolverConfig::with_policy(RelaxationPolicy::fixed(w))
        .tol(REFERENCE_TOL)
        .max_iter(pilot.iterations() + max_iter);
    let out = solve_from(problem, &config, pilot.state.clone())?;
    let final_residual = out
        .trace
        .records()
        .iter()
        .map(|r| r.max_residual())
        .fold(f64::INFINITY, f64::min);
    let best = if out.converged() || final_residual < REFERENCE_ACCEPT {
        out
    } else if let TerminationReason::NumericalFailure { iteration, reason } = out.reason {
        return Err(Error::NumericalFailure { iteration, reason });
    } else {
        pilot
    };
    let final_residual = best.trace.last().map_or(f64::NAN, |r| r.max_residual());
    Ok(Reference {
        plan: best.plan(problem.kernel())?,
        theta_sq,
        omega_opt: w,
        iterations: best.iterations(),
        final_residual,
    })
}

/// Relaxation strategy of an experiment run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Standard,
    Fixed(f64),
    /// `ω^opt` of the reference solution from the first sweep.
    Opt,
    AdaptiveResidual,
    AdaptiveSvd,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Standard,
        Strategy::Fixed(DEFAULT_FIXED_OMEGA),
        Strategy::Opt,
        Strategy::AdaptiveResidual,
        Strategy::AdaptiveSvd,
    ];

    /// File-name friendly label, e.g. `fixed-1.5`.
    pub fn label(&self) -> String {
        match self {
            Strategy::Standard => "standard".into(),
            Strategy::Fixed(w) => format!("fixed-{w}"),
            Strategy::Opt => "opt".into(),
            Strategy::AdaptiveResidual => "adaptive-residual".into(),
            Strategy::AdaptiveSvd => "adaptive-svd".into(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "standard" => return Ok(Strategy::Standard),
            "fixed" => return Ok(Strategy::Fixed(DEFAULT_FIXED_OMEGA)),
            "opt" => return Ok(Strategy::Opt),
            "adaptive-residual" => return Ok(Strategy::AdaptiveResidual),
            "adaptive-svd" => return Ok(Strategy::AdaptiveSvd),
            _ => {}
        }
        let w = s
            .strip_prefix("fixed:")
            .or_else(|| s.strip_prefix("fixed-"))
            .ok_or_else(|| invalid(format!("unknown strategy '{s}'")))?;
        let omega: f64 = w
            .parse()
            .map_err(|_| invalid(format!("cannot parse omega in strategy '{s}'")))?;
        if !(omega > 0.0 && omega < 2.0) {
            return Err(invalid(format!("omega {omega} in strategy '{s}' outside (0, 2)")));
        }
        Ok(Strategy::Fixed(omega))
    }
}

/// Comma-separated strategies; `all` selects every strategy.
pub fn parse_strategies(text: &str) -> Result<Vec<Strategy>> {
    if text.trim() == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    let list: Vec<Strategy> = text.split(',').map(str::parse).collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(invalid("no strategies given"));
    }
    Ok(list)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub spec: ExperimentSpec,
    pub strategies: Vec<Strategy>,
    pub tol: f64,
    pub max_iter: usize,
    pub residual_warmup: usize,
    pub lookback: usize,
    pub svd_warmup: usize,
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(spec: ExperimentSpec) -> Self {
        Self {
            spec,
            strategies: Strategy::ALL.to_vec(),
            tol: 1e-10,
            max_iter: 50_000,
            residual_warmup: DEFAULT_RESIDUAL_WARMUP,
            lookback: DEFAULT_LOOKBACK,
            svd_warmup: DEFAULT_SVD_WARMUP,
            record_timing: false,
        }
    }

    fn policy(&self, strategy: Strategy, reference: &Reference) -> RelaxationPolicy {
        match strategy {
            Strategy::Standard => RelaxationPolicy::fixed(1.0),
            Strategy::Fixed(w) => RelaxationPolicy::fixed(w),
            Strategy::Opt => RelaxationPolicy::fixed(reference.omega_opt),
            Strategy::AdaptiveResidual => RelaxationPolicy::adaptive_residual(self.residual_warmup, self.lookback),
            Strategy::AdaptiveSvd => RelaxationPolicy::adaptive_svd(self.svd_warmup),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub outcome: SolveOutcome,
}

impl StrategyRun {
    /// Weight of the last sweep.
    pub fn final_omega(&self) -> Option<f64> {
        self.outcome.trace.last().map(|r| r.omega)
    }

    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.outcome.trace.iterations_to(tol)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub problem: TransportProblem,
    pub reference: Reference,
    pub runs: Vec<StrategyRun>,
}

/// Generates the problem, computes the reference and runs each strategy with
/// plan-error tracking. Runs keep the order of `config.strategies`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let problem = config.spec.build()?;
    let reference = reference_solution(&problem, config.max_iter)?;
    let runs = run_strategies(&problem, &reference, config)?;
    Ok(ExperimentReport {
        problem,
        reference,
        runs,
    })
}

pub fn run_strategies(problem: &TransportProblem, reference: &Reference, config: &ExperimentConfig) -> Result<Vec<StrategyRun>> {
    let runs = par::map_indexed(config.strategies.len(), |k| -> Result<StrategyRun> {
        let strategy = config.strategies[k];
        let mut solver = SolverConfig::with_policy(config.policy(strategy, reference))
            .tol(config.tol)
            .max_iter(config.max_iter)
            .reference(reference.plan.clone());
        solver.record_timing = config.record_timing;
        Ok(StrategyRun {
            strategy,
            outcome: solve(problem, &solver, None)?,
        })
    });
    runs.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositional::{PositiveKernel, ProbabilityVector};
    use crate::generate::Family;
    use approx::assert_relative_eq;

    fn two_by_two() -> TransportProblem {
        TransportProblem::new(
            PositiveKernel::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
            ProbabilityVector::uniform(2).unwrap(),
            ProbabilityVector::uniform(2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn analysis_of_symmetric_two_by_two() {
        let r = analyze(&two_by_two(), None).unwrap();
        assert_relative_eq!(r.theta_sq, 1.0 / 9.0, max_relative = 1e-8);
        assert_relative_eq!(r.omega_opt, 1.029437, max_relative = 1e-6);
        assert_relative_eq!(r.eta, 4.0, max_relative = 1e-14);
        assert_relative_eq!(r.lambda, 1.0 / 3.0, max_relative = 1e-14);
        assert_eq!(r.delta_check(), Some(true));
        assert!(r.lambda_check());
        let keys: Vec<&str> = r.key_values().iter().map(|(k, _)| *k).collect();
        for k in ["eta", "lambda", "global_omega_upper", "delta1", "delta2", "delta", "theta_sq", "omega_opt", "rho_opt", "feasible_upper"] {
            assert!(keys.contains(&k), "{k}");
        }
    }

    #[test]
    fn analysis_of_all_ones_kernel() {
        let p = TransportProblem::new(
            PositiveKernel::from_linear(3, 3, vec![1.0; 9]).unwrap(),
            ProbabilityVector::uniform(3).unwrap(),
            ProbabilityVector::uniform(3).unwrap(),
        )
        .unwrap();
        let r = analyze(&p, None).unwrap();
        assert_eq!(r.lambda, 0.0);
        assert!(r.theta_sq < 1e-20);
        assert_relative_eq!(r.omega_opt, 1.0, epsilon = 1e-12);
        assert!(r.delta.is_err());
        assert_eq!(r.delta_check(), None);
        let kv = r.key_values();
        assert!(kv.iter().any(|(k, v)| *k == "delta" && v == "unavailable"));
    }

    #[test]
    fn analysis_with_stale_plan_fails() {
        let stale = TransportPlan::from_rows(&[vec![0.4, 0.1], vec![0.1, 0.3]]).unwrap();
        assert!(matches!(analyze(&two_by_two(), Some(&stale)), Err(Error::StalePlan { .. })));
    }

    #[test]
    fn omega_grid_parsing() {
        let g = parse_omega_grid("1.0:0.1:1.5").unwrap();
        assert_eq!(g.len(), 6);
        assert_relative_eq!(g[5], 1.5, epsilon = 1e-12);
        assert_eq!(parse_omega_grid("1.2").unwrap(), vec![1.2]);
        assert!(parse_omega_grid("0:0.5:1").is_err());
        assert!(parse_omega_grid("1:0:1.5").is_err());
        assert!(parse_omega_grid("1:x:2").is_err());
        assert!(parse_omega_grid("1:2").is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("fixed".parse::<Strategy>().unwrap(), Strategy::Fixed(1.5));
        assert_eq!("fixed:1.3".parse::<Strategy>().unwrap(), Strategy::Fixed(1.3));
        assert_eq!(Strategy::Fixed(1.5).label(), "fixed-1.5");
        assert_eq!(parse_strategies("all").unwrap().len(), 5);
        assert_eq!(
            parse_strategies("standard,opt").unwrap(),
            vec![Strategy::Standard, Strategy::Opt]
        );
        assert!(parse_strategies("standard,bogus").is_err());
        assert!("fixed:2.5".parse::<Strategy>().is_err());
        for s in Strategy::ALL {
            assert_eq!(s.label().parse::<Strategy>().unwrap(), s);
        }
    }

    #[test]
    fn single_point_sweep_matches_theta_sq() {
        let spec = ExperimentSpec::new(Family::RandomDense, 20, 0.1, 3);
        let p = spec.build().unwrap();
        let report = sweep(&p, &[1.0], 1e-12, 20_000).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.reason, TerminationReason::Converged);
        assert_relative_eq!(row.predicted_rate, report.theta_sq, max_relative = 1e-12);
        assert_relative_eq!(row.measured_rate.unwrap(), report.theta_sq, max_relative = 0.05);
    }

    #[test]
    fn experiment_is_deterministic_and_tracks_plan_error() {
        let mut cfg = ExperimentConfig::new(ExperimentSpec::new(Family::RandomDense, 15, 0.1, 11));
        cfg.strategies = vec![Strategy::Standard, Strategy::Opt, Strategy::AdaptiveResidual];
        let r1 = run_experiment(&cfg).unwrap();
        let r2 = run_experiment(&cfg).unwrap();
        assert!(r1.reference.final_residual < REFERENCE_ACCEPT);
        for (a, b) in r1.runs.iter().zip(&r2.runs) {
            assert_eq!(a.outcome.trace, b.outcome.trace);
            assert!(a.outcome.converged());
            let last = a.outcome.trace.last().unwrap();
            assert!(last.plan_error.unwrap() < 1e-8);
        }
        assert!(r1.runs[1].outcome.iterations() <= r1.runs[0].outcome.iterations());
    }
}
