use nalgebra::DMatrix;

use super::{
    binomial, estimate_mpb, fallback_variances, krr_hyperparameters, log_miss, plug_in_rate, BudgetLedger, Cell,
    Estimator, RunConfig, RunResult, RunSeed, Snapshot, MIN_VARIANCE,
};
use crate::allocation::{solve_maxmin_lp, AllocationInstance};
use crate::error::{OsarError, Result};
use crate::input_models::{ParameterSupport, PosteriorState};
use crate::krr::{DiscreteKrr, SeKernel};
use crate::problems::ProblemSpec;
use crate::rns_allocator::{PointAllocatorState, RnsSubroutine};

struct KrrState {
    grams: Vec<DMatrix<f64>>,
    gammas: Vec<f64>,
    models: Vec<DiscreteKrr>,
    /// Known variances allow rank-1 updates; estimated ones force a refit per batch.
    incremental: bool,
}

struct Cells {
    cells: Vec<Vec<Cell>>,
    known: Option<Vec<Vec<f64>>>,
}

impl Cells {
    /// λ²_i(θ_b): known, or the cell's sample variance with a per-solution fallback.
    fn variances(&self) -> Vec<Vec<f64>> {
        if let Some(k) = &self.known {
            return k.clone();
        }
        let fb = fallback_variances(&self.cells);
        self.cells
            .iter()
            .zip(&fb)
            .map(|(row, f)| row.iter().map(|c| c.sample_variance().unwrap_or(*f).max(MIN_VARIANCE)).collect())
            .collect()
    }

    fn sample_means(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|row| row.iter().map(|c| c.mean).collect()).collect()
    }

    fn counts(&self, i: usize) -> Vec<u64> {
        self.cells[i].iter().map(|c| c.n).collect()
    }
}

fn fit_krr(krr: &KrrState, cells: &Cells, variances: &[Vec<f64>], kappa: f64) -> Result<Vec<DiscreteKrr>> {
    let means = cells.sample_means();
    (0..krr.grams.len())
        .map(|i| DiscreteKrr::fit(&krr.grams[i], &means[i], &cells.counts(i), &variances[i], krr.gammas[i], kappa))
        .collect()
}

/// OSAR (sample means) or OSAR⁺ (KRR means) on a discrete support.
pub fn run_osar(
    problem: &ProblemSpec,
    config: &RunConfig,
    estimator: Estimator,
    subroutine: &dyn RnsSubroutine,
    seed: RunSeed,
) -> Result<RunResult> {
    let ParameterSupport::DiscreteGrid { points } = &problem.support else {
        return Err(OsarError::Config("run_osar needs a discrete support".into()));
    };
    let k = problem.num_solutions();
    let nb = points.len();
    let nl = problem.num_sources();
    config.validate(nb, nl)?;
    let costs = problem.costs();
    let init_cost = BudgetLedger::initial_cost(config, &costs, k, nb);
    if (config.budget as f64) < init_cost {
        return Err(OsarError::Config(format!("budget {} is below the initial cost {init_cost}", config.budget)));
    }
    let oracle = problem.oracle.as_ref();
    let mut rng = seed.rng();
    let prior = problem.prior_pmf.clone().unwrap_or_else(|| vec![1.0 / nb as f64; nb]);
    let mut posterior = PosteriorState::discrete_with_prior(problem.sources.clone(), points.clone(), prior)?;
    let mut ledger = BudgetLedger::new(config, costs.clone(), k, nb, false);

    for l in 0..nl {
        let obs: Vec<f64> = (0..config.m0).map(|_| problem.sample_input(l, &mut rng)).collect();
        posterior.update(l, &obs)?;
        ledger.record_inputs(l, config.m0 as u64);
    }
    let mut cells = Cells { cells: vec![vec![Cell::default(); nb]; k], known: None };
    for i in 0..k {
        for (b, theta) in points.iter().enumerate() {
            for _ in 0..config.n0 {
                cells.cells[i][b].push(oracle.simulate(i, theta, &mut rng)?);
            }
            ledger.record_sims(i, b, config.n0);
        }
    }
    let known: Option<Vec<Vec<f64>>> =
        (0..k).map(|i| points.iter().map(|th| oracle.known_variance(i, th)).collect()).collect();
    cells.known = known;

    let mut krr = match estimator {
        Estimator::SampleMean => None,
        Estimator::Krr => {
            let unit = SeKernel::new(SeKernel::median_lengthscales(points), 1.0)?.gram(points);
            let initial = cells.sample_means();
            let (gammas, scales): (Vec<f64>, Vec<f64>) = initial.iter().map(|m| krr_hyperparameters(m)).unzip();
            let grams = scales.iter().map(|s| &unit * *s).collect();
            let mut st = KrrState { grams, gammas, models: Vec::new(), incremental: cells.known.is_some() };
            st.models = fit_krr(&st, &cells, &cells.variances(), config.kappa)?;
            Some(st)
        }
    };

    let mut snapshots = Vec::new();
    let best = loop {
        let variances = cells.variances();
        let means: Vec<Vec<f64>> = match &mut krr {
            None => cells.sample_means(),
            Some(st) => {
                if !st.incremental {
                    st.models = fit_krr(st, &cells, &variances, config.kappa)?;
                }
                st.models.iter().map(|m| m.predictions().to_vec()).collect()
            }
        };
        let est = estimate_mpb(&means, posterior.pmf())?;
        snapshots.push(Snapshot {
            batch: ledger.batches,
            spent: ledger.spent,
            best: est.best,
            preference: est.preference[est.best],
            log_miss: log_miss(&posterior.log_pmf(), &est),
            beta: ledger.input_shares(),
        });
        if ledger.spent >= config.budget as f64 {
            break est.best;
        }

        let map = posterior.map_index().expect("discrete posterior");
        let theta_hat = &points[map];
        let kl = points
            .iter()
            .map(|th| {
                (0..nl)
                    .map(|l| Ok(posterior.empirical_kl(l, theta_hat[l], th[l])? / costs[l]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let stds: Vec<Vec<f64>> = variances.iter().map(|row| row.iter().map(|v| v.sqrt()).collect()).collect();
        let column = |m: &Vec<Vec<f64>>, b: usize| m.iter().map(|row| row[b]).collect::<Vec<f64>>();
        let counts_at = |c: &Cells, b: usize| c.cells.iter().map(|row| row[b].n).collect::<Vec<u64>>();
        let g_star: Vec<f64> = (0..nb)
            .map(|b| plug_in_rate(&column(&means, b), &column(&stds, b), &counts_at(&cells, b), est.sets.owner(b)))
            .collect();
        let favorable: Vec<bool> = (0..nb).map(|b| est.sets.owner(b) == est.best).collect();
        let sol = solve_maxmin_lp(&AllocationInstance::new(kl, g_star, favorable, config.epsilon)?)?;

        for l in 0..nl {
            let m = binomial(config.delta, sol.beta[l] / costs[l], &mut rng)?;
            if m > 0 {
                let obs: Vec<f64> = (0..m).map(|_| problem.sample_input(l, &mut rng)).collect();
                posterior.update(l, &obs)?;
                ledger.record_inputs(l, m);
            }
        }
        for (b, theta) in points.iter().enumerate() {
            let n = binomial(config.delta, sol.alpha[b], &mut rng)?;
            if n == 0 {
                continue;
            }
            let state = PointAllocatorState::new(counts_at(&cells, b), column(&means, b), column(&stds, b));
            let alloc = subroutine.allocate_batch(&state, n);
            for (i, &a) in alloc.iter().enumerate() {
                for _ in 0..a {
                    let y = oracle.simulate(i, theta, &mut rng)?;
                    cells.cells[i][b].push(y);
                    if let Some(st) = &mut krr {
                        if st.incremental {
                            st.models[i].update(b, y, variances[i][b]);
                        }
                    }
                }
                if a > 0 {
                    ledger.record_sims(i, b, a);
                }
            }
        }
        ledger.batches += 1;
    };
    Ok(RunResult::from_ledger(seed, best, &ledger, snapshots))
}
