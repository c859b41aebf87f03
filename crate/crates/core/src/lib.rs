//! Dense entropic optimal transport with standard and overrelaxed Sinkhorn
//! iterations, together with the tools to analyse their convergence rates.
//!
//! * [`compositional`]: Hilbert metric on positive vectors modulo scaling,
//!   Birkhoff contraction ratio of a kernel.
//! * [`solver`]: log-domain relaxed Sinkhorn sweeps, residual monitoring and
//!   stopping.
//! * [`spectral`]: local rate `θ²`, the rate curve `ρ_θ(ω)`, `ω^opt` and the
//!   SOR linearization used to cross-check them.
//! * [`bounds`]: data-only relaxation ranges.
//! * [`adaptive`]: runtime estimates of `θ²` and the one-shot switch policy.
//! * [`generate`] and [`io`]: experiment problem families and CSV files.
//! * [`workflows`]: analysis reports, `ω` sweeps and relaxation-strategy
//!   comparisons.

pub mod adaptive;
pub mod bounds;
pub mod compositional;
pub mod error;
pub mod generate;
pub mod interval;
pub mod io;
pub mod kernel_ops;
pub mod par;
pub mod problem;
pub mod solver;
pub mod spectral;
pub mod trace;
pub mod workflows;

pub use adaptive::{RelaxationController, RelaxationPolicy};
pub use compositional::{PositiveKernel, PositiveVector, ProbabilityVector};
pub use error::{Error, Result};
pub use interval::OpenInterval;
pub use problem::{ScalingState, TransportPlan, TransportProblem};
pub use solver::{solve, solve_from, SolveOutcome, SolverConfig, TerminationReason};
pub use trace::{ConvergenceTrace, TraceEvent, TraceRecord};
