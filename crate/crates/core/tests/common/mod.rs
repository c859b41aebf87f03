//! Independent oracles shared by the integration tests. Everything here is
//! written from the definitions with plain dense linear algebra, without
//! going through the library's analysis code.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sor_sinkhorn::{PositiveKernel, ProbabilityVector, TransportPlan, TransportProblem};

/// `max` cross-ratio `K_ij K_kl / (K_il K_kj)` over all index quadruples.
pub fn eta_brute(k: &PositiveKernel) -> f64 {
    let (m, n) = (k.rows(), k.cols());
    let mut best: f64 = 1.0;
    for i in 0..m {
        for kk in 0..m {
            for j in 0..n {
                for l in 0..n {
                    let r = (k.entry(i, j) * k.entry(kk, l)) / (k.entry(i, l) * k.entry(kk, j));
                    best = best.max(r);
                }
            }
        }
    }
    best
}

pub fn lambda_brute(k: &PositiveKernel) -> f64 {
    let s = eta_brute(k).sqrt();
    (s - 1.0) / (s + 1.0)
}

/// Hilbert distance `log max(x/y) − log min(x/y)`.
pub fn hilbert(x: &[f64], y: &[f64]) -> f64 {
    let q: Vec<f64> = x.iter().zip(y).map(|(a, b)| a / b).collect();
    let max = q.iter().cloned().fold(f64::MIN, f64::max);
    let min = q.iter().cloned().fold(f64::MAX, f64::min);
    (max / min).ln()
}

pub fn hilbert_log(lx: &[f64], ly: &[f64]) -> f64 {
    let d: Vec<f64> = lx.iter().zip(ly).map(|(a, b)| a - b).collect();
    d.iter().cloned().fold(f64::MIN, f64::max) - d.iter().cloned().fold(f64::MAX, f64::min)
}

/// Second largest eigenvalue of `S Sᵀ` (or `Sᵀ S`) for
/// `S = diag(r^{-1/2}) P diag(c^{-1/2})`.
pub fn theta_sq_oracle(plan: &TransportPlan, r: &[f64], c: &[f64]) -> f64 {
    let (m, n) = (plan.rows(), plan.cols());
    let s = DMatrix::from_fn(m, n, |i, j| plan.get(i, j) / (r[i] * c[j]).sqrt());
    let gram = if m <= n { &s * s.transpose() } else { s.transpose() * &s };
    let mut ev: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[1].max(0.0)
}

pub fn theta_sq_of(plan: &TransportPlan, problem: &TransportProblem) -> f64 {
    theta_sq_oracle(plan, problem.a().as_slice(), problem.b().as_slice())
}

pub fn omega_opt_oracle(theta_sq: f64) -> f64 {
    2.0 / (1.0 + (1.0 - theta_sq).sqrt())
}

/// Rate curve evaluated as written: the first branch up to `ω^opt`, `ω − 1`
/// beyond.
pub fn rho_oracle(theta_sq: f64, omega: f64) -> f64 {
    if omega <= omega_opt_oracle(theta_sq) {
        let disc = (omega * omega * theta_sq - 4.0 * (omega - 1.0)).max(0.0);
        0.25 * (omega * theta_sq.sqrt() + disc.sqrt()).powi(2)
    } else {
        omega - 1.0
    }
}

/// `‖P1 − a‖₁ + ‖Pᵀ1 − b‖₁`.
pub fn plan_residual(plan: &TransportPlan, problem: &TransportProblem) -> f64 {
    let l1 = |s: Vec<f64>, t: &[f64]| s.iter().zip(t).map(|(x, y)| (x - y).abs()).sum::<f64>();
    l1(plan.row_sums(), problem.a().as_slice()) + l1(plan.col_sums(), problem.b().as_slice())
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> ProbabilityVector {
    ProbabilityVector::from_weights((0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Kernel with i.i.d. uniform entries in `[lo, hi)` and random marginals.
pub fn uniform_problem(seed: u64, m: usize, n: usize, lo: f64, hi: f64) -> TransportProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (0..m * n).map(|_| rng.gen_range(lo..hi)).collect();
    let a = random_weights(&mut rng, m, 0.5, 1.5);
    let b = random_weights(&mut rng, n, 0.5, 1.5);
    TransportProblem::new(PositiveKernel::from_linear(m, n, k).unwrap(), a, b).unwrap()
}

/// Square kernel with a dominant diagonal `1 + U[0, 0.2)` and off-diagonal
/// entries `c · U[0.5, 1)`; a large lower bound on `θ²` for small `c`.
pub fn near_diagonal_problem(seed: u64, n: usize, c: f64) -> TransportProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (0..n * n)
        .map(|idx| {
            if idx / n == idx % n {
                1.0 + rng.gen_range(0.0..0.2)
            } else {
                c * rng.gen_range(0.5..1.0)
            }
        })
        .collect();
    let a = random_weights(&mut rng, n, 0.8, 1.2);
    let b = random_weights(&mut rng, n, 0.8, 1.2);
    TransportProblem::new(PositiveKernel::from_linear(n, n, k).unwrap(), a, b).unwrap()
}

/// Uniformly random log-scalings in `[−spread, spread)`.
pub fn random_start(seed: u64, m: usize, n: usize, spread: f64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lu = (0..m).map(|_| rng.gen_range(-spread..spread)).collect();
    let lv = (0..n).map(|_| rng.gen_range(-spread..spread)).collect();
    (lu, lv)
}
