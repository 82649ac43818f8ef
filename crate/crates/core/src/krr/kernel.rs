use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};

/// Squared-exponential kernel s²·exp(−½ Σ_d (x_d − y_d)²/ℓ_d²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub lengthscales: Vec<f64>,
    pub variance: f64,
}

impl SeKernel {
    pub fn new(lengthscales: Vec<f64>, variance: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(OsarError::Domain("kernel lengthscales must be positive".into()));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(OsarError::Domain(format!("kernel signal variance must be positive, got {variance}")));
        }
        Ok(Self { lengthscales, variance })
    }

    /// Median heuristic: per-dimension median of the pairwise coordinate
    /// distances over all point pairs. A zero median falls back to the median
    /// of the nonzero distances, then to 1.
    pub fn median_lengthscales(points: &[Vec<f64>]) -> Vec<f64> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        (0..dim)
            .map(|d| {
                let mut dists = Vec::new();
                for i in 0..points.len() {
                    for j in (i + 1)..points.len() {
                        dists.push((points[i][d] - points[j][d]).abs());
                    }
                }
                let m = median(&mut dists);
                if m > 0.0 {
                    return m;
                }
                let mut nonzero: Vec<f64> = dists.into_iter().filter(|v| *v > 0.0).collect();
                let m = median(&mut nonzero);
                if m > 0.0 { m } else { 1.0 }
            })
            .collect()
    }

    /// Kernel value with unit signal variance.
    pub fn unit_eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            let z = (a - b) / l;
            s += z * z;
        }
        (-0.5 * s).exp()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.variance * self.unit_eval(x, y)
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.variance;
            for j in 0..i {
                let v = self.eval(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Cross-Gram with rows indexed by `rows` and columns by `cols`.
    pub fn cross(&self, rows: &[Vec<f64>], cols: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.eval(&rows[i], &cols[j]))
    }

    /// Cross-Gram with unit signal variance.
    pub fn unit_cross(&self, rows: &[Vec<f64>], cols: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.unit_eval(&rows[i], &cols[j]))
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
