//! Experiment orchestration: seeded macroruns, PCS aggregation and report export.

mod export;
mod targets;
pub mod validation;

pub use export::{export, read_json, write_csv, write_json, CSV_FIXED_COLUMNS};
pub use targets::{target_ratios, TargetRatios, DEFAULT_TARGET_GRID};

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};
use crate::osar::{run, Algorithm, RunConfig, RunResult, RunSeed};
use crate::problems::{ProblemConfig, ProblemSpec};
use crate::rns_allocator::{DeficitGreedy, RnsSubroutine};

/// Version and `git describe` output captured at build time.
pub const BUILD_STAMP: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("OSAR_GIT_DESCRIBE"));

pub const DEFAULT_RUNS: usize = 1000;

/// Per-point R&S subroutine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subroutine {
    #[default]
    DeficitGreedy,
}

impl Subroutine {
    fn instance(self) -> &'static dyn RnsSubroutine {
        match self {
            Subroutine::DeficitGreedy => &DeficitGreedy,
        }
    }
}

/// Run settings that override the problem's suggested ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsOverride {
    pub delta: Option<u64>,
    pub epsilon: Option<f64>,
    pub m0: Option<usize>,
    pub n0: Option<u64>,
    pub budget: Option<u64>,
    pub kappa: Option<f64>,
    /// Posterior-sample size per batch for the PS variant.
    pub dense_size: Option<usize>,
}

impl SettingsOverride {
    pub fn resolve(&self, problem: &ProblemSpec) -> RunConfig {
        let mut c = RunConfig::from_suggested(&problem.suggested);
        c.delta = self.delta.unwrap_or(c.delta);
        c.epsilon = self.epsilon.unwrap_or(c.epsilon);
        c.m0 = self.m0.unwrap_or(c.m0);
        c.n0 = self.n0.unwrap_or(c.n0);
        c.budget = self.budget.unwrap_or(c.budget);
        c.kappa = self.kappa.unwrap_or(c.kappa);
        c.dense_size = self.dense_size.or(c.dense_size);
        c
    }
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

/// One experiment: a problem, an algorithm and a fan of seeded macroruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub subroutine: Subroutine,
    #[serde(default)]
    pub settings: SettingsOverride,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Budgets at which the PCS curve is sampled.
    #[serde(default)]
    pub budget_grid: Vec<u64>,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemConfig, algorithm: Algorithm) -> Self {
        Self {
            problem,
            algorithm,
            subroutine: Subroutine::default(),
            settings: SettingsOverride::default(),
            runs: DEFAULT_RUNS,
            base_seed: 0,
            budget_grid: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| OsarError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn check(&self, budget: u64) -> Result<()> {
        if self.runs == 0 {
            return Err(OsarError::Config("at least one macrorun is required".into()));
        }
        if self.budget_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OsarError::Config("budget grid must be strictly increasing".into()));
        }
        if let Some(&last) = self.budget_grid.last() {
            if last > budget {
                return Err(OsarError::Config(format!("budget grid ends at {last}, beyond T = {budget}")));
            }
        }
        Ok(())
    }
}

/// PCS and mean input shares at one budget gridpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: u64,
    pub pcs: f64,
    pub se: f64,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config: ExperimentConfig,
    pub problem: String,
    pub algorithm: String,
    pub run_config: RunConfig,
    pub runs: usize,
    pub true_best: usize,
    /// PCS of the solutions returned at T.
    pub pcs: f64,
    pub se: f64,
    pub curve: Vec<CurvePoint>,
    pub mean_input_counts: Vec<f64>,
    pub mean_simulations: f64,
    pub mean_spent: f64,
    pub mean_alpha: Vec<f64>,
    pub mean_beta: Vec<f64>,
    /// Returned solution of each run, in run-index order.
    pub bests: Vec<usize>,
    pub build: String,
}

/// Binomial standard error of a proportion over `runs` trials.
pub fn pcs_se(pcs: f64, runs: usize) -> f64 {
    (pcs * (1.0 - pcs) / runs as f64).sqrt()
}

/// Build the problem (paths relative to `base_dir`) and run the experiment.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<AggregateReport> {
    let problem = config.problem.build(base_dir)?;
    run_experiment_on(&problem, config)
}

/// Run the experiment on an already built problem.
pub fn run_experiment_on(problem: &ProblemSpec, config: &ExperimentConfig) -> Result<AggregateReport> {
    let run_config = config.settings.resolve(problem);
    config.check(run_config.budget)?;
    let results = run_all(problem, config, &run_config)?;
    info!("{}: {} runs of {} finished", problem.name, results.len(), config.algorithm.label());
    Ok(aggregate(problem, config, run_config, &results))
}

/// Every macrorun's full result, in run-index order.
pub fn run_all(problem: &ProblemSpec, config: &ExperimentConfig, run_config: &RunConfig) -> Result<Vec<RunResult>> {
    let sub = config.subroutine.instance();
    let outcomes: Vec<Result<RunResult>> = (0..config.runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = RunSeed::new(config.base_seed, r);
            let failed = |message: String| OsarError::RunFailed { seed: r, message };
            match catch_unwind(AssertUnwindSafe(|| run(problem, run_config, config.algorithm, sub, seed))) {
                Ok(Ok(res)) => Ok(res),
                Ok(Err(e)) => Err(failed(format!("base seed {}: {e}", config.base_seed))),
                Err(p) => {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    Err(failed(format!("base seed {}: panicked: {msg}", config.base_seed)))
                }
            }
        })
        .collect();
    outcomes.into_iter().collect()
}

fn mean_vectors<'a>(rows: impl Iterator<Item = &'a [f64]>, len: usize, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / n as f64).collect()
}

fn aggregate(problem: &ProblemSpec, config: &ExperimentConfig, run_config: RunConfig, results: &[RunResult]) -> AggregateReport {
    let r = results.len();
    let l = problem.num_sources();
    let correct = |best: usize| (best == problem.true_best) as usize as f64;
    let curve = config
        .budget_grid
        .iter()
        .map(|&t| {
            let snaps: Vec<_> = results
                .iter()
                .map(|res| res.first_reaching(t as f64).or_else(|| res.snapshots.last()).expect("every run has a snapshot"))
                .collect();
            let pcs = snaps.iter().map(|s| correct(s.best)).sum::<f64>() / r as f64;
            CurvePoint { budget: t, pcs, se: pcs_se(pcs, r), beta: mean_vectors(snaps.iter().map(|s| s.beta.as_slice()), l, r) }
        })
        .collect();
    let pcs = results.iter().map(|res| correct(res.best)).sum::<f64>() / r as f64;
    let counts: Vec<Vec<f64>> = results.iter().map(|res| res.input_counts.iter().map(|&m| m as f64).collect()).collect();
    let alpha_len = results[0].alpha.len();
    AggregateReport {
        config: config.clone(),
        problem: problem.name.clone(),
        algorithm: config.algorithm.label().to_string(),
        run_config,
        runs: r,
        true_best: problem.true_best,
        pcs,
        se: pcs_se(pcs, r),
        curve,
        mean_input_counts: mean_vectors(counts.iter().map(|c| c.as_slice()), l, r),
        mean_simulations: results.iter().map(|res| res.simulations as f64).sum::<f64>() / r as f64,
        mean_spent: results.iter().map(|res| res.spent).sum::<f64>() / r as f64,
        mean_alpha: mean_vectors(results.iter().map(|res| res.alpha.as_slice()), alpha_len, r),
        mean_beta: mean_vectors(results.iter().map(|res| res.beta.as_slice()), l, r),
        bests: results.iter().map(|res| res.best).collect(),
        build: BUILD_STAMP.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input_models::InputSourceModel;
    use crate::problems::{Scenario, SuggestedSettings, SupportKind, TabularConfig, TabularProblem};

    fn trivial() -> ExperimentConfig {
        let table = TabularProblem::new(
            vec![vec![1.0], vec![2.0]],
            vec![vec![0.0, 5.0], vec![3.0, 1.0]],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let problem = ProblemConfig::Tabular(TabularConfig {
            table,
            sources: vec![InputSourceModel::exponential(1.0).unwrap()],
            theta0: vec![1.0],
            prior_pmf: None,
            settings: Some(SuggestedSettings { m0: 5, n0: 2, epsilon: 1e-3, delta: 20, budget: 3000 }),
        });
        let mut c = ExperimentConfig::new(problem, Algorithm::Osar);
        c.runs = 1;
        c.budget_grid = vec![100, 1000, 3000];
        c
    }

    #[test]
    fn single_run_on_easy_problem() {
        let rep = run_experiment(&trivial(), Path::new(".")).unwrap();
        assert!(rep.pcs == 0.0 || rep.pcs == 1.0);
        assert_eq!(rep.se, 0.0);
        assert_eq!(rep.pcs, 1.0);
        assert_eq!(rep.curve.len(), 3);
        assert_eq!(rep.bests.len(), 1);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let mut c = trivial();
        c.runs = 8;
        c.base_seed = 42;
        let a = run_experiment(&c, Path::new(".")).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_experiment(&c, Path::new("."))).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn config_invariants() {
        let mut c = trivial();
        c.runs = 0;
        assert!(matches!(run_experiment(&c, Path::new(".")), Err(OsarError::Config(_))));
        let mut c = trivial();
        c.budget_grid = vec![100, 100];
        assert!(matches!(run_experiment(&c, Path::new(".")), Err(OsarError::Config(_))));
        let mut c = trivial();
        c.budget_grid = vec![100, 5000];
        assert!(matches!(run_experiment(&c, Path::new(".")), Err(OsarError::Config(_))));
    }

    #[test]
    fn failing_run_reports_its_seed() {
        let mut c = trivial();
        c.settings.budget = Some(10);
        c.budget_grid.clear();
        match run_experiment(&c, Path::new(".")) {
            Err(OsarError::RunFailed { seed, .. }) => assert_eq!(seed, 0),
            other => panic!("expected a failed run, got {other:?}"),
        }
    }

    #[test]
    fn parses_experiment_toml() {
        let text = r#"
            algorithm = "osar_plus"
            runs = 200
            base_seed = 5
            budget_grid = [1000, 2000, 4000]

            [problem]
            kind = "synthetic"
            scenario = "scenario2"

            [settings]
            budget = 4000
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.algorithm, Algorithm::OsarPlus);
        assert_eq!(c.problem, ProblemConfig::synthetic(Scenario::Scenario2, SupportKind::Discrete));
        assert_eq!(c.subroutine, Subroutine::DeficitGreedy);
        assert!(ExperimentConfig::from_toml("algorithm = \"osar\"\nrunz = 3\n[problem]\nkind = \"synthetic\"").is_err());
    }
}
