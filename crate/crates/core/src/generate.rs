//! Problem families used in experiments.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, which produces the same stream on every platform. Derived
//! seeds for the individual parts of an experiment are obtained with
//! [`sub_seed`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::compositional::{PositiveKernel, ProbabilityVector};
use crate::error::{invalid, Result};
use crate::problem::TransportProblem;

pub type Point3 = [f64; 3];

/// Blob centres and spread of the synthetic colour clouds.
const RGB_BLOBS: [Point3; 3] = [[0.80, 0.25, 0.20], [0.25, 0.45, 0.80], [0.35, 0.70, 0.30]];
const RGB_BLOB_STD: f64 = 0.12;

/// Mixes a stream index into a base seed (SplitMix64 finalizer).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// `K_ij = exp(−‖x_i − y_j‖² / ε)` for points in the unit cube. Log-entries
/// are stored exactly as `−‖x_i − y_j‖² / ε`.
pub fn gaussian_kernel(points_x: &[Point3], points_y: &[Point3], epsilon: f64) -> Result<PositiveKernel> {
    check_epsilon(epsilon)?;
    for (name, pts) in [("x", points_x), ("y", points_y)] {
        if let Some((i, p)) = pts
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(invalid(format!("point {name}[{i}] = {p:?} lies outside [0, 1]^3")));
        }
    }
    let log = points_x
        .iter()
        .flat_map(|x| {
            points_y.iter().map(move |y| {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                -d2 / epsilon
            })
        })
        .collect();
    PositiveKernel::from_log(points_x.len(), points_y.len(), log)
}

/// `K_ij = exp(−|i/(m−1) − j/(n−1)| / ε)` on uniform grids of `[0, 1]`.
pub fn grid_kernel_1d(m: usize, n: usize, epsilon: f64) -> Result<PositiveKernel> {
    check_epsilon(epsilon)?;
    if m < 2 || n < 2 {
        return Err(invalid(format!("grid sizes must be at least 2, got {m}x{n}")));
    }
    let (sm, sn) = ((m - 1) as f64, (n - 1) as f64);
    let log = (0..m)
        .flat_map(|i| (0..n).map(move |j| -(i as f64 / sm - j as f64 / sn).abs() / epsilon))
        .collect();
    PositiveKernel::from_log(m, n, log)
}

/// `K_ij = exp(−C_ij / ε)` with i.i.d. costs `C_ij ~ U[0, 1)`.
pub fn random_dense_kernel(m: usize, n: usize, epsilon: f64, seed: u64) -> Result<PositiveKernel> {
    check_epsilon(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = (0..m * n).map(|_| -rng.gen::<f64>() / epsilon).collect();
    PositiveKernel::from_log(m, n, log)
}

/// `n` draws from `U[0.1, 1.1)`, normalized to unit sum.
pub fn random_measure(n: usize, seed: u64) -> Result<ProbabilityVector> {
    if n < 2 {
        return Err(invalid(format!("measure needs at least 2 entries, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProbabilityVector::from_weights((0..n).map(|_| rng.gen_range(0.1..1.1)).collect())
}

/// `n` points from an equal-weight mixture of three Gaussian colour blobs,
/// clipped to the unit cube.
pub fn sample_rgb_cloud(n: usize, seed: u64) -> Result<Vec<Point3>> {
    if n < 2 {
        return Err(invalid(format!("cloud needs at least 2 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, RGB_BLOB_STD).expect("valid standard deviation");
    Ok((0..n)
        .map(|_| {
            let centre = RGB_BLOBS[rng.gen_range(0..RGB_BLOBS.len())];
            centre.map(|c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Gaussian kernel between two synthetic colour clouds.
    RgbGaussian,
    /// Exponential of the ℓ1 cost on two uniform grids of `[0, 1]`.
    Grid1d,
    /// Exponential of i.i.d. uniform costs.
    RandomDense,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::RgbGaussian => "rgb",
            Family::Grid1d => "grid1d",
            Family::RandomDense => "random",
        }
    }

    /// Uniform marginals for the colour and random families, random measures
    /// for the grid family.
    pub fn default_marginals(&self) -> MarginalKind {
        match self {
            Family::Grid1d => MarginalKind::Random,
            _ => MarginalKind::Uniform,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" | "rgb_gaussian" => Ok(Family::RgbGaussian),
            "grid1d" | "grid_1d" => Ok(Family::Grid1d),
            "random" | "random_dense" => Ok(Family::RandomDense),
            other => Err(invalid(format!("unknown family '{other}' (rgb, grid1d, random)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalKind {
    Uniform,
    Random,
}

impl MarginalKind {
    pub fn name(&self) -> &'static str {
        match self {
            MarginalKind::Uniform => "uniform",
            MarginalKind::Random => "random",
        }
    }
}

impl FromStr for MarginalKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MarginalKind::Uniform),
            "random" => Ok(MarginalKind::Random),
            other => Err(invalid(format!("unknown marginal kind '{other}' (uniform, random)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentSpec {
    pub family: Family,
    pub size_m: usize,
    pub size_n: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub marginals: MarginalKind,
}

impl ExperimentSpec {
    pub fn new(family: Family, size: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            family,
            size_m: size,
            size_n: size,
            epsilon,
            seed,
            marginals: family.default_marginals(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.size_m < 2 || self.size_n < 2 {
            return Err(invalid(format!(
                "sizes must be at least 2, got {}x{}",
                self.size_m, self.size_n
            )));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<PositiveKernel> {
        self.validate()?;
        let (m, n, eps) = (self.size_m, self.size_n, self.epsilon);
        match self.family {
            Family::RgbGaussian => {
                let x = sample_rgb_cloud(m, sub_seed(self.seed, 1))?;
                let y = sample_rgb_cloud(n, sub_seed(self.seed, 2))?;
                gaussian_kernel(&x, &y, eps)
            }
            Family::Grid1d => grid_kernel_1d(m, n, eps),
            Family::RandomDense => random_dense_kernel(m, n, eps, sub_seed(self.seed, 5)),
        }
    }

    pub fn build(&self) -> Result<TransportProblem> {
        let kernel = self.kernel()?;
        let (a, b) = match self.marginals {
            MarginalKind::Uniform => (
                ProbabilityVector::uniform(self.size_m)?,
                ProbabilityVector::uniform(self.size_n)?,
            ),
            MarginalKind::Random => (
                random_measure(self.size_m, sub_seed(self.seed, 3))?,
                random_measure(self.size_n, sub_seed(self.seed, 4))?,
            ),
        };
        TransportProblem::new(kernel, a, b)
    }
}
