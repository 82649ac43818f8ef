use nalgebra::{DMatrix, DVector};

use crate::error::{OsarError, Result};

/// KRR predictor on a fixed finite point set for one solution.
///
/// Holds μ̂ = γ1 + K(K + κΣ)⁻¹(μ − γ1) and C = K − K(K + κΣ)⁻¹K, which
/// lets single observations be absorbed by a rank-1 downdate.
#[derive(Clone, Debug)]
pub struct DiscreteKrr {
    gamma: f64,
    kappa: f64,
    cov: DMatrix<f64>,
    pred: DVector<f64>,
}

impl DiscreteKrr {
    /// `variances` are the per-point output variances λ², `counts` the replication counts.
    pub fn fit(
        gram: &DMatrix<f64>,
        sample_means: &[f64],
        counts: &[u64],
        variances: &[f64],
        gamma: f64,
        kappa: f64,
    ) -> Result<Self> {
        let b = gram.nrows();
        if gram.ncols() != b || sample_means.len() != b || counts.len() != b || variances.len() != b {
            return Err(OsarError::Contract("KRR inputs have inconsistent lengths".into()));
        }
        if counts.iter().any(|&n| n == 0) {
            return Err(OsarError::Contract("every point needs at least one replication".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0)) || !(kappa > 0.0) {
            return Err(OsarError::Domain("variances and kappa must be positive".into()));
        }
        let mut m = gram.clone();
        for i in 0..b {
            m[(i, i)] += kappa * variances[i] / counts[i] as f64;
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| OsarError::Numerical("K + κΣ is not positive definite".into()))?;
        let resid = DVector::from_iterator(b, sample_means.iter().map(|m| m - gamma));
        let pred = (gram * chol.solve(&resid)).add_scalar(gamma);
        let cov = gram - gram * chol.solve(gram);
        let cov = 0.5 * (&cov + cov.transpose());
        Ok(Self { gamma, kappa, cov, pred })
    }

    /// Absorb one observation `y` at point `b` with output variance `variance`.
    pub fn update(&mut self, b: usize, y: f64, variance: f64) {
        let denom = self.kappa * variance + self.cov[(b, b)];
        let col: DVector<f64> = self.cov.column(b).into_owned();
        let innov = (y - self.pred[b]) / denom;
        self.pred.axpy(innov, &col, 1.0);
        self.cov.ger(-1.0 / denom, &col, &col, 1.0);
    }

    pub fn predictions(&self) -> &[f64] {
        self.pred.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}
