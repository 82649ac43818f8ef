use nalgebra::{DMatrix, DVector};

use super::{
    binomial, estimate_mpb, fallback_variances, krr_hyperparameters, log_miss, plug_in_rate, BudgetLedger, Cell,
    ContinuousVariant, RunConfig, RunResult, RunSeed, Snapshot, MIN_VARIANCE,
};
use crate::allocation::{solve_maxmin_lp, AllocationInstance};
use crate::error::{OsarError, Result};
use crate::input_models::{log_sum_exp, ParameterSupport, PosteriorState};
use crate::krr::{AnchorData, NystromKrr, SeKernel};
use crate::problems::{ProblemSpec, SimulationOracle};
use crate::rates::argmin_lowest;
use crate::rns_allocator::{PointAllocatorState, RnsSubroutine};

/// Sample variance of the most recent ⌈N/2⌉ MAP outputs; `None` below two.
fn recent_half_variance(ys: &[f64]) -> Option<f64> {
    let take = ys.len().div_ceil(2);
    if take < 2 {
        return None;
    }
    let tail = &ys[ys.len() - take..];
    let m = tail.iter().sum::<f64>() / take as f64;
    Some(tail.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (take - 1) as f64)
}

struct Variances {
    anchors: Vec<Vec<f64>>,
    map: Vec<f64>,
}

fn current_variances(
    oracle: &dyn SimulationOracle,
    anchors: &[Vec<f64>],
    cells: &[Vec<Cell>],
    ledger: &BudgetLedger,
    map_point: &[f64],
) -> Variances {
    let fb = fallback_variances(cells);
    let anchor_vars = cells
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .zip(anchors)
                .map(|(c, th)| {
                    oracle
                        .known_variance(i, th)
                        .unwrap_or_else(|| c.sample_variance().unwrap_or(fb[i]).max(MIN_VARIANCE))
                })
                .collect()
        })
        .collect();
    let map = (0..cells.len())
        .map(|i| {
            oracle.known_variance(i, map_point).unwrap_or_else(|| {
                let ys: Vec<f64> = ledger.map_history[i].iter().map(|h| h.y).collect();
                recent_half_variance(&ys).unwrap_or(fb[i]).max(MIN_VARIANCE)
            })
        })
        .collect();
    Variances { anchors: anchor_vars, map }
}

/// Replication counts of every solution at live point `b` (the MAP is last).
fn counts_at(cells: &[Vec<Cell>], ledger: &BudgetLedger, b: usize) -> Vec<u64> {
    let nb = cells[0].len();
    (0..cells.len()).map(|i| if b < nb { cells[i][b].n } else { ledger.map_counts[i] }).collect()
}

fn anchor_data(cell: &Cell, variance: f64) -> AnchorData {
    AnchorData { count: cell.n, mean: cell.mean, variance }
}

/// OSAR⁺⁺ and its dense-set variants on a continuous support.
pub fn run_osar_continuous(
    problem: &ProblemSpec,
    config: &RunConfig,
    variant: ContinuousVariant,
    subroutine: &dyn RnsSubroutine,
    seed: RunSeed,
) -> Result<RunResult> {
    let ParameterSupport::ContinuousBox { lower, upper, anchors } = &problem.support else {
        return Err(OsarError::Config("run_osar_continuous needs a continuous support".into()));
    };
    let k = problem.num_solutions();
    let nb = anchors.len();
    let nl = problem.num_sources();
    config.validate(nb + 1, nl)?;
    let dense_size = match variant {
        ContinuousVariant::PlusPlus => 0,
        ContinuousVariant::Fd => problem.dense.len(),
        ContinuousVariant::Ps => config.dense_size.unwrap_or(problem.dense.len()),
    };
    if variant != ContinuousVariant::PlusPlus && dense_size == 0 {
        return Err(OsarError::Config("the dense-set variants need a nonempty dense set".into()));
    }
    let costs = problem.costs();
    let init_cost = BudgetLedger::initial_cost(config, &costs, k, nb);
    if (config.budget as f64) < init_cost {
        return Err(OsarError::Config(format!("budget {} is below the initial cost {init_cost}", config.budget)));
    }
    let oracle = problem.oracle.as_ref();
    let mut rng = seed.rng();
    let mut posterior = PosteriorState::continuous(problem.sources.clone());
    let mut ledger = BudgetLedger::new(config, costs.clone(), k, nb, true);

    for l in 0..nl {
        let obs: Vec<f64> = (0..config.m0).map(|_| problem.sample_input(l, &mut rng)).collect();
        posterior.update(l, &obs)?;
        ledger.record_inputs(l, config.m0 as u64);
    }
    let mut cells = vec![vec![Cell::default(); nb]; k];
    for (i, row) in cells.iter_mut().enumerate() {
        for (b, theta) in anchors.iter().enumerate() {
            for _ in 0..config.n0 {
                row[b].push(oracle.simulate(i, theta, &mut rng)?);
            }
            ledger.record_sims(i, b, config.n0);
        }
    }

    let unit = SeKernel::new(SeKernel::median_lengthscales(anchors), 1.0)?;
    let box_width: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| b - a).collect();
    let theta_hat = posterior.map_estimate(&problem.support);
    let vars = current_variances(oracle, anchors, &cells, &ledger, &theta_hat);
    let mut models = Vec::with_capacity(k);
    for i in 0..k {
        let (gamma, scale) = krr_hyperparameters(&cells[i].iter().map(|c| c.mean).collect::<Vec<_>>());
        let kernel = SeKernel::new(unit.lengthscales.clone(), scale)?;
        let data: Vec<AnchorData> = cells[i].iter().zip(&vars.anchors[i]).map(|(c, &v)| anchor_data(c, v)).collect();
        models.push(NystromKrr::fit(kernel, gamma, config.kappa, anchors, &theta_hat, &data, &[], &box_width)?);
    }
    let fixed_cross = match variant {
        ContinuousVariant::Fd => Some(unit.unit_cross(&problem.dense, anchors)),
        _ => None,
    };

    let mut snapshots = Vec::new();
    let best = loop {
        let theta_hat = posterior.map_estimate(&problem.support);
        for m in &mut models {
            m.move_map(&theta_hat);
        }
        let map_point = models[0].map_point().to_vec();
        let vars = current_variances(oracle, anchors, &cells, &ledger, &map_point);
        for (i, m) in models.iter_mut().enumerate() {
            for b in 0..nb {
                m.set_anchor(b, anchor_data(&cells[i][b], vars.anchors[i][b]));
            }
        }
        let preds: Vec<Vec<f64>> = models.iter_mut().map(|m| m.predictions()).collect();
        let mut live: Vec<Vec<f64>> = anchors.clone();
        live.push(map_point.clone());
        let logs: Vec<f64> = live.iter().map(|p| posterior.log_density(p)).collect();
        let lse = log_sum_exp(&logs);
        let log_w: Vec<f64> = logs.iter().map(|x| x - lse).collect();
        let weights: Vec<f64> = log_w.iter().map(|x| x.exp()).collect();
        let est = estimate_mpb(&preds, &weights)?;
        snapshots.push(Snapshot {
            batch: ledger.batches,
            spent: ledger.spent,
            best: est.best,
            preference: est.preference[est.best],
            log_miss: log_miss(&log_w, &est),
            beta: ledger.input_shares(),
        });
        if ledger.spent >= config.budget as f64 {
            break est.best;
        }

        let kl_row = |th: &[f64]| -> Result<Vec<f64>> {
            (0..nl).map(|l| Ok(posterior.empirical_kl(l, theta_hat[l], th[l])? / costs[l])).collect()
        };
        let kl = live.iter().map(|th| kl_row(th)).collect::<Result<Vec<_>>>()?;
        let std_at = |i: usize, b: usize| if b < nb { vars.anchors[i][b].sqrt() } else { vars.map[i].sqrt() };
        let column = |b: usize| preds.iter().map(|row| row[b]).collect::<Vec<f64>>();
        let stds_col = |b: usize| (0..k).map(|i| std_at(i, b)).collect::<Vec<f64>>();
        let g_star: Vec<f64> =
            (0..=nb).map(|b| plug_in_rate(&column(b), &stds_col(b), &counts_at(&cells, &ledger, b), est.sets.owner(b))).collect();
        let favorable: Vec<bool> = (0..=nb).map(|b| est.sets.owner(b) == est.best).collect();

        let extra_rows = if variant == ContinuousVariant::PlusPlus {
            Vec::new()
        } else {
            let sampled: Vec<Vec<f64>>;
            let (dense, cross): (&[Vec<f64>], DMatrix<f64>) = match &fixed_cross {
                Some(c) => (&problem.dense, c.clone_owned()),
                None => {
                    sampled = (0..dense_size).map(|_| posterior.sample(lower, upper, &mut rng)).collect();
                    let c = unit.unit_cross(&sampled, anchors);
                    (&sampled, c)
                }
            };
            let map_col = DVector::from_iterator(dense.len(), dense.iter().map(|d| unit.unit_eval(d, &map_point)));
            let dense_preds: Vec<DVector<f64>> = models
                .iter_mut()
                .map(|m| {
                    let scale = m.kernel().variance;
                    let gamma = m.gamma();
                    let c = m.solve().clone();
                    let mut p = &cross * c.rows(0, nb);
                    p.axpy(c[nb], &map_col, 1.0);
                    (p * scale).add_scalar(gamma)
                })
                .collect();
            let mut rows = Vec::new();
            for (d, th) in dense.iter().enumerate() {
                let col: Vec<f64> = dense_preds.iter().map(|p| p[d]).collect();
                if argmin_lowest(&col) != est.best {
                    rows.push(kl_row(th)?);
                }
            }
            rows
        };
        let inst = AllocationInstance::new(kl, g_star, favorable, config.epsilon)?.with_extra_rows(extra_rows)?;
        let sol = solve_maxmin_lp(&inst)?;

        for l in 0..nl {
            let m = binomial(config.delta, sol.beta[l] / costs[l], &mut rng)?;
            if m > 0 {
                let obs: Vec<f64> = (0..m).map(|_| problem.sample_input(l, &mut rng)).collect();
                posterior.update(l, &obs)?;
                ledger.record_inputs(l, m);
            }
        }
        let mut touched = vec![vec![false; nb]; k];
        for b in 0..=nb {
            let n = binomial(config.delta, sol.alpha[b], &mut rng)?;
            if n == 0 {
                continue;
            }
            let state = PointAllocatorState::new(counts_at(&cells, &ledger, b), column(b), stds_col(b));
            let alloc = subroutine.allocate_batch(&state, n);
            for (i, &a) in alloc.iter().enumerate() {
                for _ in 0..a {
                    if b < nb {
                        cells[i][b].push(oracle.simulate(i, &anchors[b], &mut rng)?);
                        touched[i][b] = true;
                    } else {
                        let y = oracle.simulate(i, &map_point, &mut rng)?;
                        models[i].add_map_observation(y, vars.map[i]);
                        ledger.record_map(i, &map_point, y, vars.map[i]);
                    }
                }
                if b < nb && a > 0 {
                    ledger.record_sims(i, b, a);
                }
            }
        }
        for (i, row) in touched.iter().enumerate() {
            for (b, _) in row.iter().enumerate().filter(|(_, &t)| t) {
                let v = oracle
                    .known_variance(i, &anchors[b])
                    .unwrap_or_else(|| cells[i][b].sample_variance().unwrap_or(vars.anchors[i][b]).max(MIN_VARIANCE));
                models[i].set_anchor(b, anchor_data(&cells[i][b], v));
            }
        }
        ledger.batches += 1;
    };
    Ok(RunResult::from_ledger(seed, best, &ledger, snapshots))
}
