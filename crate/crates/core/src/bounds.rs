//! Relaxation ranges that depend only on the problem data.
//!
//! * Global convergence holds for `0 < ω < 2/(1 + Λ(K))`.
//! * `θ² ≥ δ_{K,a,b}`, a lower bound built from the smallest singular value
//!   of `K`, its ∞-norms and the extreme marginal entries. Together with the
//!   local rate curve this gives weights `ω > 1` that are guaranteed to beat
//!   the standard method asymptotically.

use crate::compositional::{log_eta, contraction_from_log_eta};
use crate::error::{invalid, Error, Result};
use crate::interval::OpenInterval;
use crate::problem::TransportProblem;

/// Full rank requires `σ_min / σ_max` above this ratio.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// `(0, 2/(1 + Λ))`.
pub fn global_omega_range(lambda: f64) -> Result<OpenInterval> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(invalid(format!("contraction ratio must lie in [0, 1), got {lambda}")));
    }
    Ok(OpenInterval::new(0.0, 2.0 / (1.0 + lambda)))
}

/// Ingredients and value of the lower bound `δ_{K,a,b}` on `θ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaBound {
    pub delta_1: f64,
    pub delta_2: f64,
    /// `δ₁` if `m > n`, `δ₂` if `m < n`, `max(δ₁, δ₂)` if `m = n`.
    pub delta: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Largest row sum of `K`.
    pub k_inf_norm: f64,
    /// Largest row sum of `Kᵀ`.
    pub k_t_inf_norm: f64,
    /// Rank threshold that `sigma_min / sigma_max` was checked against.
    pub rank_threshold: f64,
}

pub fn delta_bound(problem: &TransportProblem) -> Result<DeltaBound> {
    let kernel = problem.kernel();
    let mut sv: Vec<f64> = kernel.to_matrix().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    let sigma_max = sv[0];
    let sigma_min = *sv.last().expect("kernel has at least two singular values");
    let ratio = sigma_min / sigma_max;
    if !(ratio > RANK_THRESHOLD) {
        return Err(Error::RankDeficient {
            ratio,
            threshold: RANK_THRESHOLD,
        });
    }
    let k_inf_norm = kernel.inf_norm();
    let k_t_inf_norm = kernel.transpose().inf_norm();
    let (a, b) = (problem.a(), problem.b());

    let one_side = |lo_here: f64, hi_there: f64, norm: f64| {
        (lo_here / hi_there) * (1.0 - hi_there) / ((norm / sigma_min).powi(2) - lo_here)
    };
    let delta_1 = one_side(a.min(), b.max(), k_inf_norm);
    let delta_2 = one_side(b.min(), a.max(), k_t_inf_norm);
    let delta = match problem.rows().cmp(&problem.cols()) {
        std::cmp::Ordering::Greater => delta_1,
        std::cmp::Ordering::Less => delta_2,
        std::cmp::Ordering::Equal => delta_1.max(delta_2),
    };
    Ok(DeltaBound {
        delta_1,
        delta_2,
        delta,
        sigma_min,
        sigma_max,
        k_inf_norm,
        k_t_inf_norm,
        rank_threshold: RANK_THRESHOLD,
    })
}

/// `(1, min(1 + δ, 2/(1 + Λ)))`: weights that converge globally and beat the
/// standard method locally.
pub fn guaranteed_interval(problem: &TransportProblem) -> Result<OpenInterval> {
    let delta = delta_bound(problem)?.delta;
    let lambda = contraction_from_log_eta(log_eta(problem.kernel()).value);
    Ok(interval_from(delta, lambda))
}

fn interval_from(delta: f64, lambda: f64) -> OpenInterval {
    OpenInterval::new(1.0, (1.0 + delta).min(2.0 / (1.0 + lambda)))
}

/// Everything computable before solving.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub log_eta: f64,
    pub lambda: f64,
    pub global_upper: f64,
    /// `Err` carries the reason the δ bound is unavailable (rank deficiency).
    pub delta: std::result::Result<DeltaBound, Error>,
    /// Empty interval placeholder when δ is unavailable.
    pub guaranteed_interval: Option<OpenInterval>,
}

impl BoundsReport {
    pub fn compute(problem: &TransportProblem) -> Self {
        let log_eta = log_eta(problem.kernel()).value;
        let lambda = contraction_from_log_eta(log_eta);
        let delta = delta_bound(problem);
        let guaranteed_interval = delta.as_ref().ok().map(|d| interval_from(d.delta, lambda));
        Self {
            log_eta,
            lambda,
            global_upper: 2.0 / (1.0 + lambda),
            delta,
            guaranteed_interval,
        }
    }
}
