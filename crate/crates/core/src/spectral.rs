//! Local rate analysis at a fixed point.
//!
//! Near a solution the standard iteration contracts like the second largest
//! eigenvalue `θ²` of `M = diag(1/a) P diag(1/b) Pᵀ`. `M` is similar to
//! `S Sᵀ` with `S = diag(a^{-1/2}) P diag(b^{-1/2})`, so `θ` is the second
//! singular value of `S`, which is how it is computed here. Relaxation with
//! weight `ω` turns the linearization into a block SOR matrix whose spectral
//! radius follows the classical rate curve `ρ_θ(ω)`.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{invalid, Error, Result};
use crate::interval::OpenInterval;
use crate::problem::TransportPlan;
use crate::compositional::ProbabilityVector;

/// Largest marginal residual accepted for a plan used in analysis.
pub const PLAN_RESIDUAL_LIMIT: f64 = 1e-8;
/// Allowed deviation of the top singular value of `S` from one.
pub const TOP_SINGULAR_TOL: f64 = 1e-6;
/// Above this `min(m, n)` singular values come from deflated power iteration.
pub const DENSE_SVD_MAX_DIM: usize = 2000;
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_STEPS: usize = 5000;

/// How the second singular value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularMethod {
    /// Dense SVD up to [`DENSE_SVD_MAX_DIM`], power iteration above.
    Auto,
    Dense,
    /// Power iteration on `SᵀS` with the known top right vector removed.
    PowerDeflation,
}

/// Which side of `ω^opt` a rate was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    PreOpt,
    PostOpt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCurvePoint {
    pub omega: f64,
    pub rate: f64,
    pub branch: Branch,
}

/// Derived local-rate quantities for a given `θ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub theta_squared: f64,
    pub omega_opt: f64,
    pub rho_opt: f64,
    /// `(1, 1 + θ²)`; `None` when `θ² = 0`.
    pub feasible_interval: Option<OpenInterval>,
}

impl SpectralReport {
    pub fn from_theta_squared(theta_squared: f64) -> Result<Self> {
        check_theta_squared(theta_squared)?;
        let omega_opt = omega_opt(theta_squared.sqrt())?;
        Ok(Self {
            theta_squared,
            omega_opt,
            rho_opt: omega_opt - 1.0,
            feasible_interval: feasible_interval(theta_squared)?,
        })
    }
}

fn check_theta_squared(t2: f64) -> Result<()> {
    if !(0.0..1.0).contains(&t2) {
        return Err(invalid(format!("theta^2 must lie in [0, 1), got {t2}")));
    }
    Ok(())
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&theta) {
        return Err(invalid(format!("theta must lie in [0, 1), got {theta}")));
    }
    Ok(())
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(invalid(format!("omega must lie in (0, 2), got {omega}")));
    }
    Ok(())
}

/// Largest ℓ1 marginal residual of `plan` against `a` and `b`.
pub fn plan_residual(plan: &TransportPlan, a: &ProbabilityVector, b: &ProbabilityVector) -> Result<f64> {
    if plan.rows() != a.len() || plan.cols() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "plan vs marginals",
            expected: a.len() * b.len(),
            actual: plan.rows() * plan.cols(),
        });
    }
    let l1 = |sums: Vec<f64>, target: &[f64]| -> f64 {
        sums.iter().zip(target).map(|(s, t)| (s - t).abs()).sum()
    };
    Ok(l1(plan.row_sums(), a.as_slice()).max(l1(plan.col_sums(), b.as_slice())))
}

fn check_converged(plan: &TransportPlan, a: &ProbabilityVector, b: &ProbabilityVector) -> Result<()> {
    let residual = plan_residual(plan, a, b)?;
    if !(residual <= PLAN_RESIDUAL_LIMIT) {
        return Err(Error::StalePlan {
            residual,
            limit: PLAN_RESIDUAL_LIMIT,
        });
    }
    Ok(())
}

/// `M = diag(1/a) P diag(1/b) Pᵀ` for a converged plan.
pub fn iteration_matrix_m(plan: &TransportPlan, a: &ProbabilityVector, b: &ProbabilityVector) -> Result<DMatrix<f64>> {
    check_converged(plan, a, b)?;
    let p = plan.to_matrix();
    let inv_a = DVector::from_iterator(a.len(), a.as_slice().iter().map(|x| 1.0 / x));
    let inv_b = DVector::from_iterator(b.len(), b.as_slice().iter().map(|x| 1.0 / x));
    let left = DMatrix::from_diagonal(&inv_a) * &p * DMatrix::from_diagonal(&inv_b);
    Ok(left * p.transpose())
}

/// `diag(r^{-1/2}) P diag(c^{-1/2})` for positive weights `r`, `c`.
pub fn scaled_plan(plan: &TransportPlan, row_weights: &[f64], col_weights: &[f64]) -> DMatrix<f64> {
    let mut s = plan.to_matrix();
    for i in 0..plan.rows() {
        let ri = row_weights[i].sqrt();
        for j in 0..plan.cols() {
            s[(i, j)] /= ri * col_weights[j].sqrt();
        }
    }
    s
}

/// Top two singular values of `s`. `right_top` is the known top right
/// singular vector, used by the power-iteration path.
pub fn top_two_singular_values(s: &DMatrix<f64>, right_top: &[f64], method: SingularMethod) -> Result<(f64, f64)> {
    let dense = match method {
        SingularMethod::Auto => s.nrows().min(s.ncols()) <= DENSE_SVD_MAX_DIM,
        SingularMethod::Dense => true,
        SingularMethod::PowerDeflation => false,
    };
    if dense {
        let mut sv: Vec<f64> = s.clone().singular_values().iter().copied().collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        Ok((sv[0], sv[1]))
    } else {
        power_deflation(s, right_top)
    }
}

fn power_deflation(s: &DMatrix<f64>, right_top: &[f64]) -> Result<(f64, f64)> {
    let n = s.ncols();
    let mut top = DVector::from_column_slice(right_top);
    let top_norm = top.norm();
    if !(top_norm > 0.0) {
        return Err(invalid("top singular vector must be nonzero"));
    }
    top /= top_norm;
    let sigma1 = (s * &top).norm();

    let deflate = |x: &mut DVector<f64>| {
        let c = x.dot(&top);
        x.axpy(-c, &top, 1.0);
    };
    // Deterministic start with no special alignment.
    let mut x = DVector::from_iterator(n, (0..n).map(|j| 1.0 + ((j * 7919) % 101) as f64 / 101.0));
    deflate(&mut x);
    let mut sigma2_sq = 0.0;
    for _ in 0..POWER_MAX_STEPS {
        let nx = x.norm();
        if nx == 0.0 {
            return Ok((sigma1, 0.0));
        }
        x /= nx;
        let sx = s * &x;
        let est = sx.norm_squared();
        let mut y = s.transpose() * sx;
        deflate(&mut y);
        x = y;
        if (est - sigma2_sq).abs() <= POWER_TOL * est.max(f64::MIN_POSITIVE) {
            sigma2_sq = est;
            return Ok((sigma1, sigma2_sq.sqrt()));
        }
        sigma2_sq = est;
    }
    log::warn!("power iteration for the second singular value hit {POWER_MAX_STEPS} steps");
    Ok((sigma1, sigma2_sq.sqrt()))
}

/// `θ²`: squared second singular value of `diag(a^{-1/2}) P diag(b^{-1/2})`.
pub fn theta_squared(plan: &TransportPlan, a: &ProbabilityVector, b: &ProbabilityVector) -> Result<f64> {
    theta_squared_with(plan, a, b, SingularMethod::Auto)
}

pub fn theta_squared_with(
    plan: &TransportPlan,
    a: &ProbabilityVector,
    b: &ProbabilityVector,
    method: SingularMethod,
) -> Result<f64> {
    check_converged(plan, a, b)?;
    let s = scaled_plan(plan, a.as_slice(), b.as_slice());
    let right_top: Vec<f64> = b.as_slice().iter().map(|x| x.sqrt()).collect();
    let (s1, s2) = top_two_singular_values(&s, &right_top, method)?;
    if (s1 - 1.0).abs() > TOP_SINGULAR_TOL {
        return Err(Error::StalePlan {
            residual: (s1 - 1.0).abs(),
            limit: TOP_SINGULAR_TOL,
        });
    }
    Ok((s2 * s2).min(1.0 - f64::EPSILON))
}

/// `ω^opt = 2 / (1 + √(1 − θ²))`.
pub fn omega_opt(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(2.0 / (1.0 + (1.0 - theta * theta).sqrt()))
}

/// Asymptotic rate `ρ_θ(ω)` of the relaxed iteration.
pub fn rho(theta: f64, omega: f64) -> Result<f64> {
    Ok(rate_curve_point(theta, omega)?.rate)
}

pub fn rate_curve_point(theta: f64, omega: f64) -> Result<RateCurvePoint> {
    check_theta(theta)?;
    check_omega(omega)?;
    let opt = omega_opt(theta)?;
    if omega <= opt {
        // ω²θ² − 4(ω − 1) in factored form, so that it vanishes exactly at ω^opt
        // instead of leaving a rounding residue that the square root amplifies.
        let s = (1.0 - theta * theta).sqrt();
        let disc = ((opt - omega) * (2.0 * (1.0 + s) - theta * theta * omega)).max(0.0);
        let root = omega * theta + disc.sqrt();
        Ok(RateCurvePoint {
            omega,
            rate: 0.25 * root * root,
            branch: Branch::PreOpt,
        })
    } else {
        Ok(RateCurvePoint {
            omega,
            rate: omega - 1.0,
            branch: Branch::PostOpt,
        })
    }
}

/// `(1, 1 + θ²)`, the relaxation weights that beat the standard method
/// locally. `None` when `θ² = 0`.
pub fn feasible_interval(theta_squared: f64) -> Result<Option<OpenInterval>> {
    check_theta_squared(theta_squared)?;
    if theta_squared == 0.0 {
        return Ok(None);
    }
    Ok(Some(OpenInterval::new(1.0, 1.0 + theta_squared)))
}

/// Error recursion matrix for Hilbert distances of the relaxed iteration:
/// `[[|1−ω|, ωΛ], [ωΛ|1−ω|, |1−ω| + (ωΛ)²]]`.
pub fn t_omega_matrix(lambda: f64, omega: f64) -> Matrix2<f64> {
    let d = (1.0 - omega).abs();
    let wl = omega * lambda;
    Matrix2::new(d, wl, wl * d, d + wl * wl)
}

/// Closed-form spectral radius of [`t_omega_matrix`].
pub fn t_omega_spectral_radius(lambda: f64, omega: f64) -> f64 {
    let d = (1.0 - omega).abs();
    let wl2 = (omega * lambda).powi(2);
    d + 0.5 * wl2 + (0.25 * wl2 * wl2 + wl2 * d).sqrt()
}

/// Linearization `M_ω = (I − ωL)^{-1}[(1 − ω)I + ωU]` of one relaxed sweep in
/// log coordinates, with `U = [[0, −A], [0, 0]]`, `L = [[0, 0], [−B, 0]]`,
/// `A = diag(1/P1) P` and `B = diag(1/Pᵀ1) Pᵀ`.
pub fn sor_iteration_matrix(
    plan: &TransportPlan,
    a: &ProbabilityVector,
    b: &ProbabilityVector,
    omega: f64,
) -> Result<DMatrix<f64>> {
    check_omega(omega)?;
    check_converged(plan, a, b)?;
    let (m, n) = (plan.rows(), plan.cols());
    let p = plan.to_matrix();
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    let mut fwd = p.clone();
    for i in 0..m {
        fwd.row_mut(i).scale_mut(1.0 / rows[i]);
    }
    let mut back = p.transpose();
    for j in 0..n {
        back.row_mut(j).scale_mut(1.0 / cols[j]);
    }

    let size = m + n;
    let mut lower = DMatrix::zeros(size, size);
    lower.view_mut((m, 0), (n, m)).copy_from(&(-back));
    let mut upper = DMatrix::zeros(size, size);
    upper.view_mut((0, m), (m, n)).copy_from(&(-fwd));

    let ident = DMatrix::<f64>::identity(size, size);
    let lhs = &ident - &lower * omega;
    let rhs = &ident * (1.0 - omega) + &upper * omega;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| invalid("I - omega L is singular"))
}

/// Orthonormal basis of `{x : Σ x[..m] = 0, Σ x[m..] = 0}`.
fn block_mean_zero_basis(m: usize, n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(m + n, m + n - 2);
    let mut col = 0;
    for (offset, len) in [(0, m), (m, n)] {
        // Helmert vectors
        for r in 1..len {
            let norm = ((r * (r + 1)) as f64).sqrt();
            for k in 0..r {
                q[(offset + k, col)] = 1.0 / norm;
            }
            q[(offset + r, col)] = -(r as f64) / norm;
            col += 1;
        }
    }
    q
}

/// Spectral radius of `M_ω` with the two scaling directions removed.
///
/// Block-constant vectors span an invariant subspace of `M_ω`; its spectrum
/// is the union of the spectrum on that subspace and the spectrum of the
/// compression onto the orthogonal complement, which is what is returned.
pub fn deflated_spectral_radius(m_omega: &DMatrix<f64>, m: usize, n: usize) -> Result<f64> {
    if m_omega.nrows() != m + n || !m_omega.is_square() {
        return Err(Error::DimensionMismatch {
            what: "SOR iteration matrix",
            expected: m + n,
            actual: m_omega.nrows(),
        });
    }
    let q = block_mean_zero_basis(m, n);
    let reduced = q.transpose() * m_omega * &q;
    Ok(spectral_radius(&reduced))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(mat: &DMatrix<f64>) -> f64 {
    mat.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
