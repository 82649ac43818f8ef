//! Small tabular problems defined by explicit mean and std tables on a finite point set.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};

/// `means[i][b]` and `stds[i][b]` for solution i at point b.
///
/// Outputs are N(mean, (noise_scale·std)²) while the reported variance stays
/// std², so `noise_scale = 0` gives an oracle that returns exact means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularProblem {
    pub points: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl TabularProblem {
    pub fn new(points: Vec<Vec<f64>>, means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self { points, means, stds, noise_scale: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.points.len();
        if b == 0 || self.means.len() < 2 || self.stds.len() != self.means.len() {
            return Err(OsarError::Config("tabular problem needs points, k ≥ 2 mean rows and matching std rows".into()));
        }
        for (m, s) in self.means.iter().zip(&self.stds) {
            if m.len() != b || s.len() != b {
                return Err(OsarError::Config("tabular rows must have one entry per point".into()));
            }
            if m.iter().any(|x| !x.is_finite()) || s.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(OsarError::Config("tabular means must be finite and stds positive".into()));
            }
        }
        if !(self.noise_scale >= 0.0) {
            return Err(OsarError::Config("noise_scale must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn num_solutions(&self) -> usize {
        self.means.len()
    }

    pub fn point_index(&self, theta: &[f64]) -> Result<usize> {
        self.points
            .iter()
            .position(|p| p.as_slice() == theta)
            .ok_or_else(|| OsarError::Domain(format!("θ = {theta:?} is not a tabulated point")))
    }

    pub fn simulate<R: Rng + ?Sized>(&self, i: usize, b: usize, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.means[i][b] + self.noise_scale * self.stds[i][b] * z
    }
}
