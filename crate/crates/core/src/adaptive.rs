//! Choosing the relaxation weight from solver progress.
//!
//! The standard iteration converges locally at rate `θ²`, so after a warm-up
//! phase `θ²` can be read off either from the decay of the row residual or
//! from the second singular value of the rescaled current plan. The estimate
//! is turned into `ω^opt` once, and that weight is used for the rest of the
//! run.

use crate::compositional::PositiveKernel;
use crate::error::{invalid, Error, Result};
use crate::problem::{ScalingState, TransportPlan};
use crate::spectral::{omega_opt, scaled_plan, top_two_singular_values, SingularMethod};
use crate::trace::{ConvergenceTrace, TraceEvent};

pub const DEFAULT_RESIDUAL_WARMUP: usize = 20;
pub const DEFAULT_SVD_WARMUP: usize = 50;
pub const DEFAULT_LOOKBACK: usize = 2;
pub const DEFAULT_OMEGA_CAP: f64 = 1.99;
/// Estimates of `θ²` are clamped to at most this value.
pub const THETA_SQ_CEILING: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum RelaxationPolicy {
    Fixed {
        omega: f64,
    },
    /// `warmup` standard sweeps, then `ω^opt` from the residual ratio over
    /// the last `p` sweeps.
    AdaptiveResidual {
        warmup: usize,
        p: usize,
        omega_cap: f64,
    },
    /// `warmup` standard sweeps, then `ω^opt` from the second singular value
    /// of the rescaled current plan.
    AdaptiveSvd {
        warmup: usize,
        omega_cap: f64,
    },
}

impl RelaxationPolicy {
    pub fn fixed(omega: f64) -> Self {
        Self::Fixed { omega }
    }

    pub fn adaptive_residual(warmup: usize, p: usize) -> Self {
        Self::AdaptiveResidual {
            warmup,
            p,
            omega_cap: DEFAULT_OMEGA_CAP,
        }
    }

    pub fn adaptive_svd(warmup: usize) -> Self {
        Self::AdaptiveSvd {
            warmup,
            omega_cap: DEFAULT_OMEGA_CAP,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Fixed { .. } => "fixed",
            Self::AdaptiveResidual { .. } => "adaptive-residual",
            Self::AdaptiveSvd { .. } => "adaptive-svd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_cap = |cap: f64| {
            if !(cap > 1.0 && cap < 2.0) {
                return Err(invalid(format!("omega_cap must lie in (1, 2), got {cap}")));
            }
            Ok(())
        };
        match *self {
            Self::Fixed { omega } => {
                if !(omega > 0.0 && omega < 2.0) {
                    return Err(invalid(format!("fixed omega must lie in (0, 2), got {omega}")));
                }
            }
            Self::AdaptiveResidual { warmup, p, omega_cap } => {
                check_cap(omega_cap)?;
                if p == 0 || warmup < 2 || warmup < p + 1 {
                    return Err(invalid(format!(
                        "adaptive-residual needs p >= 1 and warmup >= max(2, p + 1), got warmup={warmup}, p={p}"
                    )));
                }
            }
            Self::AdaptiveSvd { warmup, omega_cap } => {
                check_cap(omega_cap)?;
                if warmup < 2 {
                    return Err(invalid(format!("adaptive-svd needs warmup >= 2, got {warmup}")));
                }
            }
        }
        Ok(())
    }
}

/// Outcome of the residual-ratio estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualEstimate {
    Estimate {
        /// `(r_ℓ / r_{ℓ−p})^{1/p}` clamped to `[0, 1 − 1e−12]`.
        theta_sq: f64,
        /// The unclamped ratio.
        raw: f64,
    },
    /// A residual in the window is zero: nothing left to estimate.
    ConvergedEarly,
}

/// `θ̂² = (‖P_ℓ1 − a‖₁ / ‖P_{ℓ−p}1 − a‖₁)^{1/p}` from the last `p + 1`
/// records, which must all come from standard sweeps.
pub fn estimate_theta_sq_residual(trace: &ConvergenceTrace, p: usize) -> Result<ResidualEstimate> {
    if p == 0 {
        return Err(Error::InvalidWindow("p must be at least 1".into()));
    }
    let records = trace.records();
    if records.len() < p + 1 {
        return Err(Error::InvalidWindow(format!(
            "need {} records, trace has {}",
            p + 1,
            records.len()
        )));
    }
    let window = &records[records.len() - p - 1..];
    if let Some(r) = window.iter().find(|r| r.omega != 1.0) {
        return Err(Error::InvalidWindow(format!(
            "iteration {} used omega {} (window must be standard sweeps)",
            r.iteration, r.omega
        )));
    }
    let (first, last) = (window[0].residual_a, window[p].residual_a);
    if first == 0.0 || last == 0.0 {
        return Ok(ResidualEstimate::ConvergedEarly);
    }
    let raw = (last / first).powf(1.0 / p as f64);
    Ok(ResidualEstimate::Estimate {
        theta_sq: raw.clamp(0.0, THETA_SQ_CEILING),
        raw,
    })
}

/// `θ̂`: second singular value of `diag(a_ℓ^{-1/2}) P_ℓ diag(b_ℓ^{-1/2})`,
/// where `a_ℓ`, `b_ℓ` are the current plan's own marginals.
pub fn estimate_theta_svd(state: &ScalingState, kernel: &PositiveKernel) -> Result<f64> {
    let plan = TransportPlan::from_state(state, kernel)?;
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    if rows.iter().chain(&cols).any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::NumericalFailure {
            iteration: state.iteration,
            reason: "current plan has a vanishing or non-finite marginal".into(),
        });
    }
    let s = scaled_plan(&plan, &rows, &cols);
    let right_top: Vec<f64> = cols.iter().map(|x| x.sqrt()).collect();
    let (s1, s2) = top_two_singular_values(&s, &right_top, SingularMethod::Auto)?;
    if !(s2.is_finite() && s1.is_finite()) {
        return Err(Error::NumericalFailure {
            iteration: state.iteration,
            reason: "non-finite singular value".into(),
        });
    }
    // σ₁ = 1 exactly in exact arithmetic; normalize away roundoff.
    Ok(s2 / s1)
}

/// A relaxation weight plus an optional event for the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaDecision {
    pub omega: f64,
    pub event: Option<TraceEvent>,
}

impl OmegaDecision {
    fn plain(omega: f64) -> Self {
        Self { omega, event: None }
    }
}

/// Chooses `ω` before each sweep. Implementations may keep per-run state;
/// [`RelaxationController`] is the one-shot switch used by the solver.
pub trait OmegaSchedule {
    fn next_omega(&mut self, trace: &ConvergenceTrace, state: &ScalingState, kernel: &PositiveKernel) -> OmegaDecision;
}

/// Stateless decision for the sweep following `trace`.
///
/// Fixed policies return their weight. Adaptive policies return one until
/// `warmup` sweeps are recorded; from then on they estimate `θ̂²` from the
/// first `warmup` records (residual policy) or the given state (SVD policy)
/// and return `min(ω^opt(θ̂), omega_cap)`. An estimator failure or a raw
/// ratio of at least one falls back to `ω = 1`.
pub fn next_omega(
    policy: &RelaxationPolicy,
    trace: &ConvergenceTrace,
    state: &ScalingState,
    kernel: &PositiveKernel,
) -> OmegaDecision {
    let (warmup, cap) = match *policy {
        RelaxationPolicy::Fixed { omega } => return OmegaDecision::plain(omega),
        RelaxationPolicy::AdaptiveResidual { warmup, omega_cap, .. } => (warmup, omega_cap),
        RelaxationPolicy::AdaptiveSvd { warmup, omega_cap } => (warmup, omega_cap),
    };
    if trace.len() < warmup {
        return OmegaDecision::plain(1.0);
    }
    let iteration = trace.records()[warmup - 1].iteration;
    let fallback = |reason: String| OmegaDecision {
        omega: 1.0,
        event: Some(TraceEvent::Fallback { iteration, reason }),
    };

    let theta_sq = match *policy {
        RelaxationPolicy::AdaptiveResidual { p, .. } => {
            let mut window = ConvergenceTrace::new();
            for r in &trace.records()[..warmup] {
                window.push(r.clone()).expect("records come from a valid trace");
            }
            match estimate_theta_sq_residual(&window, p) {
                Ok(ResidualEstimate::Estimate { raw, .. }) if raw >= 1.0 => {
                    return fallback(format!("residual ratio estimate {raw} >= 1"));
                }
                Ok(ResidualEstimate::Estimate { theta_sq, .. }) => theta_sq,
                Ok(ResidualEstimate::ConvergedEarly) => {
                    return fallback("residual vanished during warm-up".into());
                }
                Err(e) => return fallback(e.to_string()),
            }
        }
        RelaxationPolicy::AdaptiveSvd { .. } => match estimate_theta_svd(state, kernel) {
            Ok(theta) if theta >= 1.0 => return fallback(format!("singular value estimate {theta} >= 1")),
            Ok(theta) => theta * theta,
            Err(e) => return fallback(e.to_string()),
        },
        RelaxationPolicy::Fixed { .. } => unreachable!(),
    };
    match omega_opt(theta_sq.sqrt()) {
        Ok(w) => {
            let omega = w.min(cap);
            OmegaDecision {
                omega,
                event: Some(TraceEvent::Switched {
                    iteration,
                    theta_sq_estimate: theta_sq,
                    omega,
                }),
            }
        }
        Err(e) => fallback(e.to_string()),
    }
}

/// One-shot switch: evaluates [`next_omega`] once the warm-up is complete and
/// keeps that weight afterwards.
#[derive(Debug, Clone)]
pub struct RelaxationController {
    policy: RelaxationPolicy,
    switched: Option<f64>,
}

impl RelaxationController {
    pub fn new(policy: RelaxationPolicy) -> Self {
        Self {
            policy,
            switched: None,
        }
    }

    pub fn switched_omega(&self) -> Option<f64> {
        self.switched
    }
}

impl OmegaSchedule for RelaxationController {
    fn next_omega(&mut self, trace: &ConvergenceTrace, state: &ScalingState, kernel: &PositiveKernel) -> OmegaDecision {
        if let Some(w) = self.switched {
            return OmegaDecision::plain(w);
        }
        let decision = next_omega(&self.policy, trace, state, kernel);
        if decision.event.is_some() {
            self.switched = Some(decision.omega);
        }
        decision
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;
    use approx::assert_relative_eq;

    fn geometric_trace(len: usize, r: f64, omega: f64) -> ConvergenceTrace {
        let mut t = ConvergenceTrace::new();
        for k in 1..=len {
            t.push(TraceRecord {
                iteration: k,
                omega,
                residual_a: 0.3 * r.powi(k as i32),
                residual_b: 0.0,
                plan_error: None,
                elapsed_seconds: None,
            })
            .unwrap();
        }
        t
    }

    fn dummy() -> (ScalingState, PositiveKernel) {
        (
            ScalingState::ones(2, 2),
            PositiveKernel::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
        )
    }

    #[test]
    fn residual_estimate_is_exact_on_geometric_traces() {
        for p in 1..6 {
            let t = geometric_trace(10, 0.9, 1.0);
            match estimate_theta_sq_residual(&t, p).unwrap() {
                ResidualEstimate::Estimate { theta_sq, .. } => assert_relative_eq!(theta_sq, 0.9, max_relative = 1e-13),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn residual_estimate_arithmetic() {
        let mut t = ConvergenceTrace::new();
        for (k, r) in [(1, 1e-2), (2, 3e-3), (3, 2.5e-5)] {
            t.push(TraceRecord {
                iteration: k,
                omega: 1.0,
                residual_a: r,
                residual_b: 0.0,
                plan_error: None,
                elapsed_seconds: None,
            })
            .unwrap();
        }
        match estimate_theta_sq_residual(&t, 2).unwrap() {
            ResidualEstimate::Estimate { theta_sq, .. } => assert_relative_eq!(theta_sq, 0.05, max_relative = 1e-13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn residual_estimate_errors_and_signals() {
        let t = geometric_trace(3, 0.9, 1.0);
        assert!(matches!(estimate_theta_sq_residual(&t, 3), Err(Error::InvalidWindow(_))));
        let t = geometric_trace(5, 0.9, 1.2);
        assert!(matches!(estimate_theta_sq_residual(&t, 2), Err(Error::InvalidWindow(_))));
        let mut t = geometric_trace(3, 0.9, 1.0);
        t.push(TraceRecord {
            iteration: 4,
            omega: 1.0,
            residual_a: 0.0,
            residual_b: 0.0,
            plan_error: None,
            elapsed_seconds: None,
        })
        .unwrap();
        assert_eq!(estimate_theta_sq_residual(&t, 2).unwrap(), ResidualEstimate::ConvergedEarly);
        let t = geometric_trace(5, 1.1, 1.0);
        match estimate_theta_sq_residual(&t, 2).unwrap() {
            ResidualEstimate::Estimate { theta_sq, raw } => {
                assert_eq!(theta_sq, THETA_SQ_CEILING);
                assert!(raw > 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixed_policy_returns_its_weight() {
        let (s, k) = dummy();
        let mut c = RelaxationController::new(RelaxationPolicy::fixed(1.5));
        for len in [0, 5, 50] {
            let t = geometric_trace(len, 0.5, 1.5);
            assert_eq!(c.next_omega(&t, &s, &k).omega, 1.5);
        }
    }

    #[test]
    fn residual_policy_switches_once_to_omega_opt() {
        let (s, k) = dummy();
        let policy = RelaxationPolicy::adaptive_residual(20, 2);
        let mut c = RelaxationController::new(policy.clone());
        for len in 0..20 {
            assert_eq!(c.next_omega(&geometric_trace(len, 0.81, 1.0), &s, &k).omega, 1.0);
        }
        let d = c.next_omega(&geometric_trace(20, 0.81, 1.0), &s, &k);
        let expected = 2.0 / (1.0 + (1.0f64 - 0.81).sqrt());
        assert_relative_eq!(d.omega, expected, max_relative = 1e-12);
        assert_relative_eq!(d.omega, 1.392864, epsilon = 1e-6);
        assert!(matches!(d.event, Some(TraceEvent::Switched { iteration: 20, .. })));
        // later calls reuse the switched weight even if the trace changes
        let later = c.next_omega(&geometric_trace(30, 0.5, 1.0), &s, &k);
        assert_eq!(later, OmegaDecision::plain(d.omega));
        // the stateless decision agrees on the same trace
        assert_eq!(next_omega(&policy, &geometric_trace(25, 0.81, 1.0), &s, &k).omega, d.omega);
    }

    #[test]
    fn estimate_above_one_falls_back() {
        let (s, k) = dummy();
        let mut c = RelaxationController::new(RelaxationPolicy::adaptive_residual(5, 2));
        let d = c.next_omega(&geometric_trace(5, 1.05, 1.0), &s, &k);
        assert_eq!(d.omega, 1.0);
        assert!(matches!(d.event, Some(TraceEvent::Fallback { .. })));
    }

    #[test]
    fn cap_limits_omega() {
        let (s, k) = dummy();
        let policy = RelaxationPolicy::AdaptiveResidual {
            warmup: 4,
            p: 1,
            omega_cap: 1.5,
        };
        let d = next_omega(&policy, &geometric_trace(4, 0.999, 1.0), &s, &k);
        assert_eq!(d.omega, 1.5);
    }

    #[test]
    fn policy_validation() {
        assert!(RelaxationPolicy::fixed(2.0).validate().is_err());
        assert!(RelaxationPolicy::fixed(1.99).validate().is_ok());
        assert!(RelaxationPolicy::adaptive_residual(2, 2).validate().is_err());
        assert!(RelaxationPolicy::adaptive_residual(20, 0).validate().is_err());
        assert!(RelaxationPolicy::adaptive_svd(1).validate().is_err());
        assert!(RelaxationPolicy::AdaptiveSvd { warmup: 5, omega_cap: 2.0 }.validate().is_err());
    }

    #[test]
    fn svd_estimate_rank_one_is_zero() {
        let x = [0.5, 2.0, 1.0];
        let y = [3.0, 0.25, 1.0];
        let e = x.iter().flat_map(|a| y.iter().map(move |b| a * b)).collect();
        let k = PositiveKernel::from_linear(3, 3, e).unwrap();
        let s = ScalingState::new(vec![0.1, -0.3, 0.7], vec![1.0, 0.0, -2.0]).unwrap();
        assert!(estimate_theta_svd(&s, &k).unwrap() < 1e-7);
    }
}
