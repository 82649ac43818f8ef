use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{solve_maxmin_lp, AllocationInstance};
use crate::error::{OsarError, Result};
use crate::input_models::{kl_divergence, ParameterSupport};
use crate::problems::ProblemSpec;
use crate::rates::{argmin_lowest, optimal_point_rate};

/// Points per axis of the grid standing in for the continuous adversarial set.
pub const DEFAULT_TARGET_GRID: usize = 2001;

/// Upper limit on the number of grid points evaluated.
const MAX_GRID_POINTS: usize = 50_000_000;

/// Limiting allocation of the ε-floored program evaluated on ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRatios {
    /// Points carrying an α entry; for a continuous support, Θ⁺ followed by θ₀.
    pub points: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub objective: f64,
    /// KL-only rows from the dense grid after dominance filtering.
    pub grid_rows: usize,
}

struct Truth {
    means: Vec<f64>,
    stds: Vec<f64>,
}

fn truth_at(problem: &ProblemSpec, theta: &[f64]) -> Result<Truth> {
    let k = problem.num_solutions();
    let missing = || OsarError::Config(format!("{}: ground-truth means and variances are not available", problem.name));
    let means = (0..k).map(|i| problem.oracle.true_mean(i, theta).ok_or_else(missing)).collect::<Result<Vec<_>>>()?;
    let stds = (0..k)
        .map(|i| problem.oracle.known_variance(i, theta).map(f64::sqrt).ok_or_else(missing))
        .collect::<Result<Vec<_>>>()?;
    Ok(Truth { means, stds })
}

fn kl_row(problem: &ProblemSpec, theta: &[f64]) -> Result<Vec<f64>> {
    problem
        .sources
        .iter()
        .enumerate()
        .map(|(l, s)| Ok(kl_divergence(s.family, problem.theta0[l], theta[l])? / s.cost))
        .collect()
}

/// Keep the rows not weakly dominated by another; exact for two sources only.
fn pareto_2d(mut rows: Vec<[f64; 2]>) -> Vec<Vec<f64>> {
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for r in rows {
        if r[1] < best {
            best = r[1];
            out.push(r.to_vec());
        }
    }
    out
}

fn grid_points(dim: usize, per_axis: usize) -> Result<usize> {
    let total = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(per_axis));
    match total {
        Some(n) if n <= MAX_GRID_POINTS && per_axis >= 2 => Ok(n),
        _ => Err(OsarError::Config(format!(
            "a {per_axis}-point grid in {dim} dimensions is outside the supported size"
        ))),
    }
}

fn grid_point(lower: &[f64], upper: &[f64], per_axis: usize, mut index: usize) -> Vec<f64> {
    (0..lower.len())
        .map(|d| {
            let j = index % per_axis;
            index /= per_axis;
            lower[d] + (upper[d] - lower[d]) * j as f64 / (per_axis - 1) as f64
        })
        .collect()
}

/// α*(ε), β*(ε) of the allocation program built from exact KL divergences
/// and exact per-point rates.
///
/// A discrete support uses its own points. A continuous support puts α on
/// Θ⁺ ∪ {θ₀} and approximates the adversarial set by a grid with
/// `grid_per_axis` points per axis.
pub fn target_ratios(problem: &ProblemSpec, epsilon: f64, grid_per_axis: usize) -> Result<TargetRatios> {
    let i0 = problem.true_best;
    let points: Vec<Vec<f64>> = match &problem.support {
        ParameterSupport::DiscreteGrid { points } => points.clone(),
        ParameterSupport::ContinuousBox { anchors, .. } => {
            let mut p = anchors.clone();
            p.push(problem.theta0.clone());
            p
        }
    };
    let mut kl = Vec::with_capacity(points.len());
    let mut g_star = Vec::with_capacity(points.len());
    let mut favorable = Vec::with_capacity(points.len());
    for theta in &points {
        let t = truth_at(problem, theta)?;
        let owner = argmin_lowest(&t.means);
        kl.push(kl_row(problem, theta)?);
        favorable.push(owner == i0);
        let g = if owner == i0 {
            match optimal_point_rate(&t.means, &t.stds, i0) {
                Ok(r) => r.rate,
                Err(OsarError::Degenerate(_)) => 0.0,
                Err(e) => return Err(e),
            }
        } else {
            0.0
        };
        g_star.push(g);
    }
    let mut inst = AllocationInstance::new(kl, g_star, favorable, epsilon)?;

    let mut grid_rows = 0;
    if let ParameterSupport::ContinuousBox { lower, upper, .. } = &problem.support {
        let n = grid_points(lower.len(), grid_per_axis)?;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let theta = grid_point(lower, upper, grid_per_axis, idx);
                let t = truth_at(problem, &theta)?;
                if argmin_lowest(&t.means) == i0 {
                    return Ok(None);
                }
                kl_row(problem, &theta).map(Some)
            })
            .collect::<Result<Vec<Option<Vec<f64>>>>>()?
            .into_iter()
            .flatten()
            .collect();
        let rows = if problem.num_sources() == 2 { pareto_2d(rows.iter().map(|r| [r[0], r[1]]).collect()) } else { rows };
        grid_rows = rows.len();
        inst = inst.with_extra_rows(rows)?;
    }
    let sol = solve_maxmin_lp(&inst)?;
    Ok(TargetRatios { points, alpha: sol.alpha, beta: sol.beta, objective: sol.objective, grid_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input_models::InputSourceModel;
    use crate::problems::{tabular_spec, ProblemConfig, Scenario, SuggestedSettings, SupportKind, TabularProblem};
    use std::path::Path;

    #[test]
    fn baseline_favors_first_source() {
        let p = ProblemConfig::synthetic(Scenario::Baseline, SupportKind::Discrete).build(Path::new(".")).unwrap();
        let t = target_ratios(&p, p.suggested.epsilon, DEFAULT_TARGET_GRID).unwrap();
        assert!(t.beta[0] > t.beta[1], "{:?}", t.beta);
        assert!((t.alpha.iter().chain(&t.beta).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_epsilon() {
        let p = ProblemConfig::synthetic(Scenario::Baseline, SupportKind::Discrete).build(Path::new(".")).unwrap();
        assert!(matches!(target_ratios(&p, 0.3, DEFAULT_TARGET_GRID), Err(OsarError::Infeasible(_))));
    }

    #[test]
    fn two_point_toy_matches_hand_solution() {
        // θ₀ = 1 favors solution 0 with gap 1 and unit variances; θ = 2 is adversarial.
        let table = TabularProblem::new(
            vec![vec![1.0], vec![2.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let settings = SuggestedSettings { m0: 1, n0: 1, epsilon: 0.0, delta: 1, budget: 10 };
        let p = tabular_spec(table, vec![InputSourceModel::exponential(1.0).unwrap()], vec![1.0], settings).unwrap();
        let t = target_ratios(&p, 0.0, DEFAULT_TARGET_GRID).unwrap();
        // G at θ₀: equal variances split evenly, rate = 1/(2·(1/0.5 + 1/0.5)) = 1/8.
        // max min(α/8, β·D) with α + β = 1 gives α = 8D/(1 + 8D).
        let d = 0.5 - 1.0 - 0.5f64.ln();
        assert!((t.alpha[0] - 8.0 * d / (1.0 + 8.0 * d)).abs() < 1e-9);
        assert!(t.alpha[1].abs() < 1e-12);
        assert!((t.objective - d / (1.0 + 8.0 * d)).abs() < 1e-9);
    }

    #[test]
    fn continuous_target_uses_grid_rows() {
        let p = ProblemConfig::synthetic(Scenario::Baseline, SupportKind::Continuous).build(Path::new(".")).unwrap();
        let coarse = target_ratios(&p, 1e-4, 201).unwrap();
        assert_eq!(coarse.alpha.len(), 122);
        assert!(coarse.grid_rows > 0);
        assert!(coarse.beta[0] > 0.0 && coarse.beta[1] > 0.0);
    }

    #[test]
    fn pareto_filter() {
        let rows = pareto_2d(vec![[1.0, 3.0], [2.0, 2.0], [2.5, 2.5], [3.0, 1.0], [1.0, 4.0]]);
        assert_eq!(rows, vec![vec![1.0, 3.0], vec![2.0, 2.0], vec![3.0, 1.0]]);
    }

    #[test]
    fn supply_chain_has_no_ground_truth() {
        let p = ProblemConfig::supply_chain().build(Path::new(".")).unwrap();
        assert!(matches!(target_ratios(&p, 1e-4, 3), Err(OsarError::Config(_))));
    }
}
