//! Problem data, iterates and transport plans.

use nalgebra::DMatrix;

use crate::compositional::{PositiveKernel, ProbabilityVector};
use crate::error::{invalid, Error, Result};
use crate::kernel_ops::{log_sum_exp, Side};
use crate::par::{self, Execution};

/// Marginals `a`, `b` and kernel `K` of the scaling problem
/// `u ∘ Kv = a`, `v ∘ Kᵀu = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    kernel: PositiveKernel,
    a: ProbabilityVector,
    b: ProbabilityVector,
}

impl TransportProblem {
    pub fn new(kernel: PositiveKernel, a: ProbabilityVector, b: ProbabilityVector) -> Result<Self> {
        if a.len() != kernel.rows() {
            return Err(Error::DimensionMismatch {
                what: "row marginal a",
                expected: kernel.rows(),
                actual: a.len(),
            });
        }
        if b.len() != kernel.cols() {
            return Err(Error::DimensionMismatch {
                what: "column marginal b",
                expected: kernel.cols(),
                actual: b.len(),
            });
        }
        Ok(Self { kernel, a, b })
    }

    pub fn kernel(&self) -> &PositiveKernel {
        &self.kernel
    }

    pub fn a(&self) -> &ProbabilityVector {
        &self.a
    }

    pub fn b(&self) -> &ProbabilityVector {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.kernel.rows()
    }

    pub fn cols(&self) -> usize {
        self.kernel.cols()
    }

    /// The problem with `K`, `a` and `b` replaced by `Kᵀ`, `b` and `a`.
    pub fn transposed(&self) -> Self {
        Self {
            kernel: self.kernel.transpose(),
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

/// Scaling pair `(u, v)` stored as logarithms, plus the sweep counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingState {
    pub log_u: Vec<f64>,
    pub log_v: Vec<f64>,
    pub iteration: usize,
}

impl ScalingState {
    pub fn new(log_u: Vec<f64>, log_v: Vec<f64>) -> Result<Self> {
        let s = Self {
            log_u,
            log_v,
            iteration: 0,
        };
        if !s.is_finite() {
            return Err(invalid("scaling state has non-finite entries"));
        }
        Ok(s)
    }

    /// `u = v = 1`.
    pub fn ones(m: usize, n: usize) -> Self {
        Self {
            log_u: vec![0.0; m],
            log_v: vec![0.0; n],
            iteration: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_u.iter().chain(&self.log_v).all(|x| x.is_finite())
    }

    pub fn u(&self) -> Vec<f64> {
        self.log_u.iter().map(|x| x.exp()).collect()
    }

    pub fn v(&self) -> Vec<f64> {
        self.log_v.iter().map(|x| x.exp()).collect()
    }

    pub(crate) fn check_dims(&self, kernel: &PositiveKernel) -> Result<()> {
        if self.log_u.len() != kernel.rows() {
            return Err(Error::DimensionMismatch {
                what: "log_u",
                expected: kernel.rows(),
                actual: self.log_u.len(),
            });
        }
        if self.log_v.len() != kernel.cols() {
            return Err(Error::DimensionMismatch {
                what: "log_v",
                expected: kernel.cols(),
                actual: self.log_v.len(),
            });
        }
        Ok(())
    }
}

/// Dense nonnegative `m x n` matrix `diag(u) K diag(v)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl TransportPlan {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows * cols != entries.len() {
            return Err(Error::DimensionMismatch {
                what: "plan entries",
                expected: rows * cols,
                actual: entries.len(),
            });
        }
        if let Some((idx, x)) = entries
            .iter()
            .enumerate()
            .find(|(_, x)| !(**x >= 0.0 && x.is_finite()))
        {
            return Err(invalid(format!(
                "plan entry at row {}, column {} is negative or not finite ({x})",
                idx / cols,
                idx % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("ragged plan rows"));
        }
        Self::new(rows.len(), n, rows.concat())
    }

    /// Plan of a scaling state, `exp(log u_i + log K_ij + log v_j)`.
    pub fn from_state(state: &ScalingState, kernel: &PositiveKernel) -> Result<Self> {
        state.check_dims(kernel)?;
        let (m, n) = (kernel.rows(), kernel.cols());
        let mut entries = vec![0.0; m * n];
        let log_k = kernel.log_entries();
        par::fill(&mut entries, Execution::default(), 1, |idx| {
            let (i, j) = (idx / n, idx % n);
            (state.log_u[i] + log_k[idx] + state.log_v[j]).exp()
        });
        Self::new(m, n, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries
            .chunks_exact(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.entries.chunks_exact(self.cols) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut entries = vec![0.0; self.entries.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                entries[j * self.rows + i] = self.entries[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    /// Entrywise ℓ1 distance.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                what: "plan shape",
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(x, y)| (x - y).abs())
            .sum())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }
}

/// ℓ1 distance between `diag(u) K diag(v)` and `reference`, evaluated without
/// materializing the plan.
pub(crate) fn plan_l1_error(
    state: &ScalingState,
    kernel: &PositiveKernel,
    reference: &TransportPlan,
) -> f64 {
    let n = kernel.cols();
    let log_k = kernel.log_entries();
    let refs = reference.entries();
    par::ordered_sum(0..kernel.rows(), Execution::default(), n, |i| {
        let lu = state.log_u[i];
        (0..n)
            .map(|j| ((lu + log_k[i * n + j] + state.log_v[j]).exp() - refs[i * n + j]).abs())
            .sum()
    })
}

/// `log Σ_ij exp(x_i + log K_ij + y_j)` on the given side's orientation.
pub(crate) fn log_bilinear(kernel: &PositiveKernel, log_x: &[f64], log_y: &[f64]) -> f64 {
    let mut log_ky = vec![0.0; kernel.rows()];
    crate::kernel_ops::log_matvec(kernel, Side::Kernel, log_y, &mut log_ky, Execution::default());
    log_sum_exp(log_x.iter().zip(&log_ky).map(|(x, k)| x + k))
}
