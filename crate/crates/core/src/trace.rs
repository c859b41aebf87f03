//! Per-sweep convergence records.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Sweep counter, starting at 1 for the first full sweep.
    pub iteration: usize,
    pub omega: f64,
    /// `‖P1 − a‖₁` after the sweep.
    pub residual_a: f64,
    /// `‖Pᵀ1 − b‖₁` after the sweep.
    pub residual_b: f64,
    /// `‖P − P_ref‖₁` when a reference plan is configured.
    pub plan_error: Option<f64>,
    /// Wall time since the solve started, when timing is enabled.
    pub elapsed_seconds: Option<f64>,
}

impl TraceRecord {
    pub fn max_residual(&self) -> f64 {
        self.residual_a.max(self.residual_b)
    }
}

/// Notable decisions taken by a relaxation schedule during a solve.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Switched {
        iteration: usize,
        theta_sq_estimate: f64,
        omega: f64,
    },
    Fallback {
        iteration: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    records: Vec<TraceRecord>,
    events: Vec<TraceEvent>,
}

impl ConvergenceTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(invalid(format!(
                    "trace iterations must increase ({} after {})",
                    record.iteration, last.iteration
                )));
            }
        }
        if !(record.residual_a >= 0.0 && record.residual_b >= 0.0) {
            return Err(invalid("trace residuals must be nonnegative"));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn push_event(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// First sweep whose larger marginal residual is below `tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.max_residual() < tol)
            .map(|r| r.iteration)
    }

    /// Geometric mean of the last `window` ratios of `residual_a`, i.e.
    /// `(r_last / r_{last−window})^{1/window}`. Uses fewer ratios when the
    /// trace is shorter. Records with `residual_a <= floor` are ignored so
    /// the estimate is not polluted by roundoff.
    pub fn tail_rate(&self, window: usize, floor: f64) -> Option<f64> {
        let usable: Vec<f64> = self
            .records
            .iter()
            .map(|r| r.residual_a)
            .take_while(|&r| r > floor)
            .collect();
        if usable.len() < 2 || window == 0 {
            return None;
        }
        let w = window.min(usable.len() - 1);
        let last = usable[usable.len() - 1];
        let first = usable[usable.len() - 1 - w];
        Some((last / first).powf(1.0 / w as f64))
    }
}
