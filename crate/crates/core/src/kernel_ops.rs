//! Log-domain products with a positive kernel.
//!
//! `log_matvec` returns `log(K exp(x))` (or the transposed product). Each
//! output first tries a shifted linear product `c + log Σ_j K_ij exp(x_j − c)`
//! with `c = max x`, which needs one exponential per input entry instead of
//! one per kernel entry. If the shifted sum is too small to be represented
//! without subnormal loss, that output is recomputed with a full log-sum-exp
//! over the log-entries.

use crate::compositional::PositiveKernel;
use crate::par::{self, Execution};

/// Shifted sums below this value are recomputed in the log domain.
pub const FAST_PATH_FLOOR: f64 = 1e-280;

/// Which product to form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `K x`, output length `m`.
    Kernel,
    /// `Kᵀ x`, output length `n`.
    Transpose,
}

/// Stable `log Σ exp(values)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY || !mx.is_finite() {
        return mx;
    }
    mx + values.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn lines(kernel: &PositiveKernel, side: Side) -> (&[f64], &[f64], usize, usize) {
    match side {
        Side::Kernel => (kernel.log_rows(), kernel.lin_rows(), kernel.rows(), kernel.cols()),
        Side::Transpose => (kernel.log_cols(), kernel.lin_cols(), kernel.cols(), kernel.rows()),
    }
}

/// `out = log(K exp(log_x))` for [`Side::Kernel`], `log(Kᵀ exp(log_x))` for
/// [`Side::Transpose`].
pub fn log_matvec(kernel: &PositiveKernel, side: Side, log_x: &[f64], out: &mut [f64], exec: Execution) {
    let (log_k, lin_k, n_out, n_in) = lines(kernel, side);
    assert_eq!(log_x.len(), n_in, "input length");
    assert_eq!(out.len(), n_out, "output length");

    let shift = log_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_x.iter().map(|x| (x - shift).exp()).collect();

    par::fill(out, exec, n_in, |i| {
        let lin_row = &lin_k[i * n_in..(i + 1) * n_in];
        let s: f64 = lin_row.iter().zip(&weights).map(|(k, w)| k * w).sum();
        if s > FAST_PATH_FLOOR && s.is_finite() {
            shift + s.ln()
        } else {
            let log_row = &log_k[i * n_in..(i + 1) * n_in];
            log_sum_exp(log_row.iter().zip(log_x).map(|(k, x)| k + x))
        }
    });
}

/// Same product evaluated entirely by log-sum-exp, one exponential per kernel
/// entry. Slower, used as a reference.
pub fn log_matvec_exact(kernel: &PositiveKernel, side: Side, log_x: &[f64], out: &mut [f64], exec: Execution) {
    let (log_k, _, n_out, n_in) = lines(kernel, side);
    assert_eq!(log_x.len(), n_in, "input length");
    assert_eq!(out.len(), n_out, "output length");
    par::fill(out, exec, n_in, |i| {
        let log_row = &log_k[i * n_in..(i + 1) * n_in];
        log_sum_exp(log_row.iter().zip(log_x).map(|(k, x)| k + x))
    });
}
