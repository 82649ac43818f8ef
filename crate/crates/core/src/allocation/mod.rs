//! Max–min input/simulation budget allocation programs.
//!
//! The program maximizes, over sampling fractions (α, β) on the simplex with
//! every component at least ε, the smallest row value
//! Σ_ℓ β_ℓ·kl[b,ℓ] + α_b·g*_b·1{b favorable}. It is solved in epigraph form
//! with the shifted variables α' = α − ε, β' = β − ε.

pub mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};
use simplex::{LinearProgram, Relation};

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationInstance {
    /// B×L rates D^KL(θ̂^ℓ‖θ_b^ℓ)/c_ℓ.
    pub kl: Vec<Vec<f64>>,
    /// Point rates G*(θ_b).
    pub g_star: Vec<f64>,
    /// Membership of θ_b in the estimated favorable set.
    pub favorable: Vec<bool>,
    /// Extra KL-only rows with no α variable (a dense adversarial set).
    pub extra_rows: Vec<Vec<f64>>,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub objective: f64,
}

impl AllocationInstance {
    pub fn new(kl: Vec<Vec<f64>>, g_star: Vec<f64>, favorable: Vec<bool>, epsilon: f64) -> Result<Self> {
        let inst = Self { kl, g_star, favorable, extra_rows: Vec::new(), epsilon };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_extra_rows(mut self, extra_rows: Vec<Vec<f64>>) -> Result<Self> {
        self.extra_rows = extra_rows;
        self.validate()?;
        Ok(self)
    }

    pub fn num_points(&self) -> usize {
        self.kl.len()
    }

    pub fn num_sources(&self) -> usize {
        self.kl.first().or(self.extra_rows.first()).map(|r| r.len()).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        let b = self.kl.len();
        let l = self.num_sources();
        if l == 0 {
            return Err(OsarError::Contract("allocation instance has no input sources".into()));
        }
        if self.g_star.len() != b || self.favorable.len() != b {
            return Err(OsarError::Contract("g_star/favorable length differs from point count".into()));
        }
        for row in self.kl.iter().chain(&self.extra_rows) {
            if row.len() != l {
                return Err(OsarError::Contract("rate rows have mixed lengths".into()));
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(OsarError::Domain("rate entries must be finite and nonnegative".into()));
            }
        }
        if self.g_star.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(OsarError::Domain("point rates must be finite and nonnegative".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(OsarError::Domain(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        let load = self.epsilon * (b + l) as f64;
        if load >= 1.0 {
            return Err(OsarError::Infeasible(load));
        }
        Ok(())
    }

    /// Inner minimum of the program at a given (α, β), over all rows.
    pub fn evaluate(&self, alpha: &[f64], beta: &[f64]) -> f64 {
        let dot = |row: &[f64]| row.iter().zip(beta).map(|(k, b)| k * b).sum::<f64>();
        let mut v = f64::INFINITY;
        for (b, row) in self.kl.iter().enumerate() {
            let gain = if self.favorable[b] { alpha[b] * self.g_star[b] } else { 0.0 };
            v = v.min(dot(row) + gain);
        }
        for row in &self.extra_rows {
            v = v.min(dot(row));
        }
        v
    }
}

/// Row of the reduced program: β coefficients plus an optional α gain.
struct Row<'a> {
    kl: &'a [f64],
    gain: f64,
    point: Option<usize>,
    sum: f64,
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Drop rows implied by a KL-only row whose coefficients are componentwise
/// no larger. Exact: the dropped constraint is never binding alone.
fn prune(rows: Vec<Row<'_>>) -> Vec<Row<'_>> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| rows[i].sum.total_cmp(&rows[j].sum).then(i.cmp(&j)));
    let mut kl_only_kept: Vec<usize> = Vec::new();
    let mut keep = vec![false; rows.len()];
    for &i in &order {
        if kl_only_kept.iter().any(|&j| dominates(rows[j].kl, rows[i].kl)) {
            continue;
        }
        keep[i] = true;
        if rows[i].gain == 0.0 {
            kl_only_kept.push(i);
        }
    }
    rows.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r).collect()
}

/// Extra rows added per round of constraint generation.
const ROWS_PER_ROUND: usize = 8;

/// Solve the ε-floored max–min allocation program.
///
/// KL-only extra rows are brought in by constraint generation: the program is
/// solved on a working subset and the most violated extra rows are added
/// until none is violated, which makes the restricted optimum optimal for
/// the full program.
///
/// A row with zero KL and no α gain holds the optimum at zero for every
/// allocation. Such rows are left out when choosing (α, β), and the reported
/// objective is still the inner minimum over all rows.
pub fn solve_maxmin_lp(inst: &AllocationInstance) -> Result<AllocationSolution> {
    inst.validate()?;
    let b_count = inst.num_points();
    let l = inst.num_sources();
    // Nothing left to choose by: return the uniform point.
    let all_pinned = inst.extra_rows.iter().all(|r| is_zero(r))
        && inst.kl.iter().enumerate().all(|(b, row)| point_pinned(inst, b, row));
    if all_pinned {
        let u = 1.0 / (b_count + l) as f64;
        return Ok(AllocationSolution { alpha: vec![u; b_count], beta: vec![u; l], objective: 0.0 });
    }
    let dot = |row: &[f64], beta: &[f64]| row.iter().zip(beta).map(|(k, b)| k * b).sum::<f64>();
    let mut active: Vec<usize> = Vec::new();
    if let Some(first) = (0..inst.extra_rows.len())
        .filter(|&j| !is_zero(&inst.extra_rows[j]))
        .min_by(|&i, &j| inst.extra_rows[i].iter().sum::<f64>().total_cmp(&inst.extra_rows[j].iter().sum::<f64>()))
    {
        active.push(first);
    }
    loop {
        let (alpha, beta) = solve_restricted(inst, &active)?;
        let restricted = restricted_value(inst, &active, &alpha, &beta);
        let tol = 1e-12 * restricted.abs().max(1.0);
        let mut violated: Vec<(f64, usize)> = inst
            .extra_rows
            .iter()
            .enumerate()
            .filter(|(_, row)| !is_zero(row))
            .map(|(j, row)| (dot(row, &beta), j))
            .filter(|&(v, _)| v < restricted - tol)
            .collect();
        if violated.is_empty() {
            let objective = inst.evaluate(&alpha, &beta);
            return Ok(AllocationSolution { alpha, beta, objective });
        }
        violated.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let before = active.len();
        for &(_, j) in violated.iter().take(ROWS_PER_ROUND) {
            if !active.contains(&j) {
                active.push(j);
            }
        }
        if active.len() == before {
            return Err(OsarError::Numerical("constraint generation stalled".into()));
        }
    }
}

fn is_zero(row: &[f64]) -> bool {
    row.iter().all(|v| *v == 0.0)
}

fn point_pinned(inst: &AllocationInstance, b: usize, row: &[f64]) -> bool {
    is_zero(row) && (!inst.favorable[b] || inst.g_star[b] == 0.0)
}

/// Inner minimum over the liftable point rows and the active extra rows.
fn restricted_value(inst: &AllocationInstance, active: &[usize], alpha: &[f64], beta: &[f64]) -> f64 {
    let dot = |row: &[f64]| row.iter().zip(beta).map(|(k, b)| k * b).sum::<f64>();
    let mut v = f64::INFINITY;
    for (b, row) in inst.kl.iter().enumerate() {
        if point_pinned(inst, b, row) {
            continue;
        }
        let gain = if inst.favorable[b] { alpha[b] * inst.g_star[b] } else { 0.0 };
        v = v.min(dot(row) + gain);
    }
    for &j in active {
        v = v.min(dot(&inst.extra_rows[j]));
    }
    v
}

/// Simplex solve over the point rows plus the listed extra rows.
fn solve_restricted(inst: &AllocationInstance, active: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let b_count = inst.num_points();
    let l = inst.num_sources();
    let eps = inst.epsilon;

    let mut rows: Vec<Row<'_>> = Vec::with_capacity(b_count + active.len());
    for (b, kl) in inst.kl.iter().enumerate() {
        if point_pinned(inst, b, kl) {
            continue;
        }
        let gain = if inst.favorable[b] { inst.g_star[b] } else { 0.0 };
        rows.push(Row { kl, gain, point: Some(b), sum: kl.iter().sum::<f64>() });
    }
    for &j in active {
        let kl = &inst.extra_rows[j];
        rows.push(Row { kl, gain: 0.0, point: None, sum: kl.iter().sum::<f64>() });
    }
    let rows = prune(rows);

    // Variables: D, then α' for rows that keep a positive gain, then β'.
    let alpha_vars: Vec<usize> = rows.iter().filter(|r| r.gain > 0.0).filter_map(|r| r.point).collect();
    let na = alpha_vars.len();
    let n = 1 + na + l;
    let mut lp = LinearProgram { objective: vec![0.0; n], rows: Vec::with_capacity(rows.len() + 1) };
    lp.objective[0] = 1.0;
    let mut next_alpha = 0;
    for r in &rows {
        let mut coef = vec![0.0; n];
        coef[0] = 1.0;
        let mut rhs = eps * r.sum;
        if r.gain > 0.0 {
            coef[1 + next_alpha] = -r.gain;
            next_alpha += 1;
            rhs += eps * r.gain;
        }
        for (j, k) in r.kl.iter().enumerate() {
            coef[1 + na + j] = -k;
        }
        lp.rows.push((coef, Relation::Le, rhs));
    }
    let mut budget = vec![1.0; n];
    budget[0] = 0.0;
    lp.rows.push((budget, Relation::Eq, 1.0 - eps * (b_count + l) as f64));

    let sol = simplex::solve(&lp)?;
    let mut alpha = vec![eps; b_count];
    for (v, &p) in alpha_vars.iter().enumerate() {
        alpha[p] += sol.x[1 + v];
    }
    let beta: Vec<f64> = (0..l).map(|j| eps + sol.x[1 + na + j]).collect();
    Ok((alpha, beta))
}

/// The input-only program: max D s.t. D ≤ d_jᵀβ with d_j = kl_j / c, β on the simplex.
pub fn input_only_lp(kl_rows: &[Vec<f64>], costs: &[f64]) -> Result<(Vec<f64>, f64)> {
    if kl_rows.is_empty() {
        return Err(OsarError::Contract("input-only program needs at least one adversarial row".into()));
    }
    if costs.iter().any(|c| !(*c > 0.0)) {
        return Err(OsarError::Domain("costs must be positive".into()));
    }
    let rows: Vec<Vec<f64>> =
        kl_rows.iter().map(|r| r.iter().zip(costs).map(|(k, c)| k / c).collect()).collect();
    let inst = AllocationInstance {
        kl: Vec::new(),
        g_star: Vec::new(),
        favorable: Vec::new(),
        extra_rows: rows,
        epsilon: 0.0,
    };
    let sol = solve_maxmin_lp(&inst)?;
    Ok((sol.beta, sol.objective))
}

/// Certified bound ε(B+L) on the relative optimality loss 1 − V(ε)/V(0).
pub fn optimality_gap_bound(b: usize, l: usize, epsilon: f64) -> Result<f64> {
    let n = (b + l) as f64;
    if !(epsilon > 0.0 && epsilon < 1.0 / n) {
        return Err(OsarError::Domain(format!("epsilon {epsilon} outside (0, 1/(B+L)) = (0, {})", 1.0 / n)));
    }
    Ok(epsilon * n)
}
