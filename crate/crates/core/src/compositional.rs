//! Positive vectors and kernels viewed modulo positive scaling.
//!
//! A positive vector `x` represents the class `{t x : t > 0}`. The Hilbert norm
//! `log max_ij x_i / x_j` is a norm on those classes, and the Hilbert distance
//! between two representatives is the norm of their entrywise quotient. For a
//! strictly positive kernel `K`, the map `v -> Kv` contracts that distance by
//! the Birkhoff ratio `Λ(K) = (√η − 1)/(√η + 1)`, where `η(K)` is the largest
//! cross-ratio `K_ik K_jl / (K_jk K_il)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::par;

/// Largest `min(m, n)` for which `η(K)` is evaluated exactly over all pairs.
pub const EXACT_ETA_MAX_DIM: usize = 2000;

/// Number of random index pairs inspected above [`EXACT_ETA_MAX_DIM`].
pub const SAMPLED_ETA_PAIRS: usize = 200_000;

const SUM_TOL: f64 = 1e-12;

/// A strictly positive vector with at least two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveVector(Vec<f64>);

impl PositiveVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(invalid(format!(
                "positive vector needs at least 2 entries, got {}",
                entries.len()
            )));
        }
        if let Some((i, &x)) = entries
            .iter()
            .enumerate()
            .find(|(_, &x)| !(x > 0.0 && x.is_finite()))
        {
            return Err(invalid(format!("entry {i} is not a finite positive number ({x})")));
        }
        Ok(Self(entries))
    }

    /// Builds the representative `exp(log_entries)`.
    pub fn from_log(log_entries: &[f64]) -> Result<Self> {
        Self::new(log_entries.iter().map(|l| l.exp()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Compositional addition: the class of the entrywise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        check_len("hadamard operand", self.len(), other.len())?;
        Self::new(self.0.iter().zip(&other.0).map(|(x, y)| x * y).collect())
    }

    /// Compositional scalar multiplication: entrywise power.
    pub fn pow(&self, gamma: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|x| x.powf(gamma)).collect())
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|x| x * t).collect())
    }
}

/// A strictly positive vector whose entries sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates positivity and that the entries sum to one within `1e-12`.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let v = PositiveVector::new(entries)?;
        let sum: f64 = v.0.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self(v.0))
    }

    /// Normalizes positive weights to unit sum.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let v = PositiveVector::new(weights)?;
        let sum: f64 = v.0.iter().sum();
        Ok(Self(v.0.into_iter().map(|x| x / sum).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("marginal needs at least 2 entries, got {n}")));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn ln(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.ln()).collect()
    }
}

/// Dense, strictly positive `m x n` kernel.
///
/// Log-entries are authoritative. Linear entries are kept alongside for fast
/// products and may underflow to zero for very small regularization. Both are
/// stored row-major and transposed so that products with `K` and `Kᵀ` walk
/// contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveKernel {
    rows: usize,
    cols: usize,
    log: Vec<f64>,
    lin: Vec<f64>,
    log_t: Vec<f64>,
    lin_t: Vec<f64>,
}

impl PositiveKernel {
    /// Builds a kernel from row-major linear entries.
    pub fn from_linear(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols, entries.len())?;
        for (idx, &x) in entries.iter().enumerate() {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::NonPositiveEntry {
                    row: idx / cols,
                    col: idx % cols,
                    value: x,
                });
            }
        }
        let log = entries.iter().map(|x| x.ln()).collect();
        Ok(Self::assemble(rows, cols, log, entries))
    }

    /// Builds a kernel from row-major log-entries.
    pub fn from_log(rows: usize, cols: usize, log_entries: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols, log_entries.len())?;
        for (idx, &l) in log_entries.iter().enumerate() {
            if !l.is_finite() || l > f64::MAX.ln() {
                return Err(invalid(format!(
                    "log-entry at row {}, column {} is not finite or overflows ({l})",
                    idx / cols,
                    idx % cols
                )));
            }
        }
        let lin = log_entries.iter().map(|l| l.exp()).collect();
        Ok(Self::assemble(rows, cols, log_entries, lin))
    }

    /// Builds a kernel from both representations. Linear entries may be zero
    /// where the log-entry underflows, but must otherwise agree with it.
    pub fn from_parts(rows: usize, cols: usize, lin: Vec<f64>, log: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols, lin.len())?;
        check_shape(rows, cols, log.len())?;
        for (idx, (&x, &l)) in lin.iter().zip(&log).enumerate() {
            let (row, col) = (idx / cols, idx % cols);
            if !l.is_finite() {
                return Err(invalid(format!(
                    "log-entry at row {row}, column {col} is not finite ({l})"
                )));
            }
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::NonPositiveEntry { row, col, value: x });
            }
            let expected = l.exp();
            if (x - expected).abs() > 1e-9 * expected.max(f64::MIN_POSITIVE) && expected > 1e-300 {
                return Err(invalid(format!(
                    "linear entry {x} at row {row}, column {col} disagrees with log-entry {l}"
                )));
            }
        }
        Ok(Self::assemble(rows, cols, log, lin))
    }

    /// Convenience constructor from nested rows of linear entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(invalid(format!("row {i} has {} entries, expected {n}", r.len())));
        }
        Self::from_linear(m, n, rows.concat())
    }

    fn assemble(rows: usize, cols: usize, log: Vec<f64>, lin: Vec<f64>) -> Self {
        let log_t = transpose(rows, cols, &log);
        let lin_t = transpose(rows, cols, &lin);
        Self {
            rows,
            cols,
            log,
            lin,
            log_t,
            lin_t,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.lin[i * self.cols + j]
    }

    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.log[i * self.cols + j]
    }

    /// Row-major log-entries.
    pub fn log_entries(&self) -> &[f64] {
        &self.log
    }

    /// Row-major linear entries.
    pub fn linear_entries(&self) -> &[f64] {
        &self.lin
    }

    pub(crate) fn log_rows(&self) -> &[f64] {
        &self.log
    }

    pub(crate) fn lin_rows(&self) -> &[f64] {
        &self.lin
    }

    pub(crate) fn log_cols(&self) -> &[f64] {
        &self.log_t
    }

    pub(crate) fn lin_cols(&self) -> &[f64] {
        &self.lin_t
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            log: self.log_t.clone(),
            lin: self.lin_t.clone(),
            log_t: self.log.clone(),
            lin_t: self.lin.clone(),
        }
    }

    /// Linear entries as a dense matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.lin)
    }

    /// Operator ∞-norm: the largest row sum.
    pub fn inf_norm(&self) -> f64 {
        self.lin
            .chunks_exact(self.cols)
            .map(|r| r.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Product `K x` in linear arithmetic.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.lin
            .chunks_exact(self.cols)
            .map(|r| r.iter().zip(x).map(|(k, x)| k * x).sum())
            .collect()
    }
}

fn check_shape(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows < 2 || cols < 2 {
        return Err(invalid(format!(
            "kernel must be at least 2x2, got {rows}x{cols}"
        )));
    }
    if rows * cols != len {
        return Err(Error::DimensionMismatch {
            what: "kernel entries",
            expected: rows * cols,
            actual: len,
        });
    }
    Ok(())
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

fn transpose(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

/// `‖x‖_H = log(max x / min x)`.
pub fn hilbert_norm(x: &PositiveVector) -> f64 {
    let (lo, hi) = min_max(x.as_slice().iter().copied());
    (hi / lo).ln()
}

/// Hilbert distance between the classes of `x` and `y`.
pub fn hilbert_distance(x: &PositiveVector, y: &PositiveVector) -> Result<f64> {
    check_len("hilbert distance operand", x.len(), y.len())?;
    let (lo, hi) = min_max(x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a / b));
    Ok((hi / lo).ln())
}

/// Hilbert norm of the class represented by `exp(log_x)`.
pub fn hilbert_norm_log(log_x: &[f64]) -> Result<f64> {
    if log_x.len() < 2 {
        return Err(invalid(format!(
            "Hilbert norm needs at least 2 entries, got {}",
            log_x.len()
        )));
    }
    let (lo, hi) = min_max(log_x.iter().copied());
    Ok(hi - lo)
}

/// Hilbert distance between `exp(log_x)` and `exp(log_y)`.
pub fn hilbert_distance_log(log_x: &[f64], log_y: &[f64]) -> Result<f64> {
    check_len("hilbert distance operand", log_x.len(), log_y.len())?;
    if log_x.len() < 2 {
        return Err(invalid("Hilbert distance needs at least 2 entries"));
    }
    let (lo, hi) = min_max(log_x.iter().zip(log_y).map(|(a, b)| a - b));
    Ok(hi - lo)
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

/// `log η(K)` and whether it was evaluated over every index pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEta {
    pub value: f64,
    /// `false` when `min(m, n)` exceeds [`EXACT_ETA_MAX_DIM`]; the value is
    /// then a lower bound from sampled pairs.
    pub exact: bool,
}

/// Largest log cross-ratio `log K_ik + log K_jl − log K_jk − log K_il`.
///
/// For a fixed pair of columns `(k, l)` the maximum over rows `(i, j)` is the
/// spread of `d_i = log K_ik − log K_il`, so only pairs along the smaller
/// dimension are enumerated.
pub fn log_eta(kernel: &PositiveKernel) -> LogEta {
    // Pairs run over the smaller dimension; `lines` are contiguous vectors
    // along the other one.
    let (pairs, len, lines) = if kernel.cols <= kernel.rows {
        (kernel.cols, kernel.rows, kernel.log_cols())
    } else {
        (kernel.rows, kernel.cols, kernel.log_rows())
    };
    let line = |k: usize| &lines[k * len..(k + 1) * len];
    let spread = |k: usize, l: usize| {
        let (lo, hi) = min_max(line(k).iter().zip(line(l)).map(|(a, b)| a - b));
        hi - lo
    };

    if pairs <= EXACT_ETA_MAX_DIM {
        let value = par::max_over(0..pairs, |k| {
            (k + 1..pairs).map(|l| spread(k, l)).fold(0.0, f64::max)
        });
        LogEta { value, exact: true }
    } else {
        log::warn!(
            "kernel dimension {pairs} exceeds {EXACT_ETA_MAX_DIM}; eta is a sampled lower bound"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e7a);
        let samples: Vec<(usize, usize)> = (0..SAMPLED_ETA_PAIRS)
            .map(|_| (rng.gen_range(0..pairs), rng.gen_range(0..pairs)))
            .collect();
        let value = par::max_over(0..samples.len(), |s| {
            let (k, l) = samples[s];
            spread(k, l)
        });
        LogEta {
            value,
            exact: false,
        }
    }
}

/// `η(K)`; may be `+inf` when the log value exceeds the f64 range.
pub fn eta(kernel: &PositiveKernel) -> f64 {
    log_eta(kernel).value.exp()
}

/// `Λ(K) = (√η − 1)/(√η + 1) = tanh(log η / 4)`.
pub fn birkhoff_contraction(kernel: &PositiveKernel) -> f64 {
    contraction_from_log_eta(log_eta(kernel).value)
}

pub fn contraction_from_log_eta(log_eta: f64) -> f64 {
    (0.25 * log_eta).tanh()
}
