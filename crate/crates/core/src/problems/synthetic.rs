//! Ten-solution synthetic family with two exponential input sources.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};

pub const NUM_SOLUTIONS: usize = 10;
pub const A: [f64; 2] = [5.0, 2.5];
pub const LOWER: [f64; 2] = [1.0, 1.0];
pub const UPPER: [f64; 2] = [3.0, 2.0];
pub const THETA0_DISCRETE: [f64; 2] = [1.6, 1.4];
pub const THETA0_CONTINUOUS: [f64; 2] = [std::f64::consts::FRAC_PI_2, std::f64::consts::SQRT_2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    Scenario1,
    Scenario2,
    Scenario3,
    Scenario4,
    Scenario5,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Baseline,
        Scenario::Scenario1,
        Scenario::Scenario2,
        Scenario::Scenario3,
        Scenario::Scenario4,
        Scenario::Scenario5,
    ];

    pub fn costs(self) -> [f64; 2] {
        match self {
            Scenario::Scenario3 => [1.0, 2.0],
            _ => [1.0, 1.0],
        }
    }

    pub fn epsilon(self) -> f64 {
        match self {
            Scenario::Scenario5 => 1e-3,
            _ => 1e-4,
        }
    }

    /// θ₀ for the discrete support.
    pub fn theta0(self) -> [f64; 2] {
        match self {
            Scenario::Scenario4 => [1.4, 1.2],
            _ => THETA0_DISCRETE,
        }
    }
}

/// Mean and output-noise field of the synthetic family.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticProblem {
    pub scenario: Scenario,
    pub theta0: [f64; 2],
}

fn check_box(theta: &[f64]) -> Result<()> {
    if theta.len() != 2 || (0..2).any(|d| !(theta[d] >= LOWER[d] && theta[d] <= UPPER[d])) {
        return Err(OsarError::Domain(format!("θ = {theta:?} outside [1,3]×[1,2]")));
    }
    Ok(())
}

impl SyntheticProblem {
    pub fn new(scenario: Scenario, theta0: [f64; 2]) -> Self {
        Self { scenario, theta0 }
    }

    /// η_i(θ) = (aᵀθ − 10√i)² for the 1-based solution number i = `i + 1`.
    pub fn mean(&self, i: usize, theta: &[f64]) -> Result<f64> {
        check_box(theta)?;
        if i >= NUM_SOLUTIONS {
            return Err(OsarError::Domain(format!("solution index {i} out of range")));
        }
        Ok(mean_unchecked(i, theta))
    }

    pub fn std(&self, i: usize, theta: &[f64]) -> Result<f64> {
        check_box(theta)?;
        if i >= NUM_SOLUTIONS {
            return Err(OsarError::Domain(format!("solution index {i} out of range")));
        }
        Ok(self.std_unchecked(theta))
    }

    pub(crate) fn std_unchecked(&self, theta: &[f64]) -> f64 {
        let dist = (theta[0] - self.theta0[0]).abs().max((theta[1] - self.theta0[1]).abs());
        match self.scenario {
            Scenario::Scenario1 => 6.0 - 2.0 * dist,
            Scenario::Scenario2 => 2.0 + 2.0 * dist,
            _ => 8.0,
        }
    }

    /// One N(η_i(θ), λ_i²(θ)) output.
    pub fn simulate<R: Rng + ?Sized>(&self, i: usize, theta: &[f64], rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        mean_unchecked(i, theta) + self.std_unchecked(theta) * z
    }
}

pub(crate) fn mean_unchecked(i: usize, theta: &[f64]) -> f64 {
    let x = A[0] * theta[0] + A[1] * theta[1] - 10.0 * ((i + 1) as f64).sqrt();
    x * x
}

/// The 11×11 grid {1 + 2j/10} × {1 + j/10}.
pub fn grid_121() -> Vec<Vec<f64>> {
    grid(11)
}

/// `n`×`n` equally spaced grid over [1,3]×[1,2], first coordinate slowest.
pub fn grid(n: usize) -> Vec<Vec<f64>> {
    let step = |d: usize, j: usize| LOWER[d] + (UPPER[d] - LOWER[d]) * j as f64 / (n - 1) as f64;
    (0..n).flat_map(|a| (0..n).map(move |b| vec![step(0, a), step(1, b)])).collect()
}
