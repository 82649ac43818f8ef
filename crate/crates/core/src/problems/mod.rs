//! Benchmark problems behind a common simulation interface.

pub mod halton;
pub mod supply_chain;
pub mod synthetic;
pub mod toy;

use std::fmt::Debug;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};
use crate::input_models::{InputFamily, InputSourceModel, ParameterSupport, SufficientStats};
use crate::rates::argmin_lowest;

pub use halton::{halton_design, halton_unit, radical_inverse};
pub use supply_chain::{Routing, SupplyChainProblem};
pub use synthetic::{Scenario, SyntheticProblem};
pub use toy::TabularProblem;

/// Stochastic simulator of k solutions under an input parameter vector.
///
/// Every problem is posed as minimization; maximization problems negate
/// their outputs.
pub trait SimulationOracle: Send + Sync + Debug {
    fn num_solutions(&self) -> usize;

    /// One simulation output of solution `i` at `theta`.
    fn simulate(&self, i: usize, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64>;

    /// Output variance λ²_i(θ) when the algorithm may treat it as known.
    fn known_variance(&self, i: usize, theta: &[f64]) -> Option<f64>;

    /// Exact mean, available for closed-form benchmarks only.
    fn true_mean(&self, i: usize, theta: &[f64]) -> Option<f64>;
}

impl SimulationOracle for SyntheticProblem {
    fn num_solutions(&self) -> usize {
        synthetic::NUM_SOLUTIONS
    }

    fn simulate(&self, i: usize, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        self.mean(i, theta)?;
        Ok(SyntheticProblem::simulate(self, i, theta, rng))
    }

    fn known_variance(&self, _i: usize, theta: &[f64]) -> Option<f64> {
        Some(self.std_unchecked(theta).powi(2))
    }

    fn true_mean(&self, i: usize, theta: &[f64]) -> Option<f64> {
        Some(synthetic::mean_unchecked(i, theta))
    }
}

impl SimulationOracle for SupplyChainProblem {
    fn num_solutions(&self) -> usize {
        supply_chain::NUM_CENTERS
    }

    /// Negated batch-averaged throughput.
    fn simulate(&self, i: usize, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        self.replicate(i, theta, rng)?;
        Ok(-self.batch_throughput(i, theta, rng))
    }

    fn known_variance(&self, _i: usize, _theta: &[f64]) -> Option<f64> {
        None
    }

    fn true_mean(&self, _i: usize, _theta: &[f64]) -> Option<f64> {
        None
    }
}

impl SimulationOracle for TabularProblem {
    fn num_solutions(&self) -> usize {
        TabularProblem::num_solutions(self)
    }

    fn simulate(&self, i: usize, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        let b = self.point_index(theta)?;
        Ok(TabularProblem::simulate(self, i, b, rng))
    }

    fn known_variance(&self, i: usize, theta: &[f64]) -> Option<f64> {
        self.point_index(theta).ok().map(|b| self.stds[i][b].powi(2))
    }

    fn true_mean(&self, i: usize, theta: &[f64]) -> Option<f64> {
        self.point_index(theta).ok().map(|b| self.means[i][b])
    }
}

/// Initial sample sizes, tolerance and budget a problem is usually run with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestedSettings {
    pub m0: usize,
    pub n0: u64,
    pub epsilon: f64,
    pub delta: u64,
    pub budget: u64,
}

/// A fully built benchmark instance shared read-only by all macroruns.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub sources: Vec<InputSourceModel>,
    pub theta0: Vec<f64>,
    /// Discrete grid, or continuous box with the anchor set Θ⁺.
    pub support: ParameterSupport,
    /// Prior pmf over a discrete grid; uniform when `None`.
    pub prior_pmf: Option<Vec<f64>>,
    pub true_best: usize,
    pub oracle: Arc<dyn SimulationOracle>,
    /// Fixed dense point set 𝒟 for the continuous variants.
    pub dense: Vec<Vec<f64>>,
    pub suggested: SuggestedSettings,
}

impl ProblemSpec {
    pub fn num_solutions(&self) -> usize {
        self.oracle.num_solutions()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.cost).collect()
    }

    pub fn box_bounds(&self) -> Option<(&[f64], &[f64])> {
        match &self.support {
            ParameterSupport::ContinuousBox { lower, upper, .. } => Some((lower, upper)),
            ParameterSupport::DiscreteGrid { .. } => None,
        }
    }

    /// One real-world observation from every source at the true parameter.
    pub fn sample_input(&self, source: usize, rng: &mut ChaCha8Rng) -> f64 {
        self.sources[source].sample(self.theta0[source], rng)
    }

    fn validate(&self) -> Result<()> {
        let l = self.sources.len();
        if self.theta0.len() != l || self.support.dim() != l {
            return Err(OsarError::Config(format!("{}: parameter dimension differs from source count", self.name)));
        }
        for (src, &th) in self.sources.iter().zip(&self.theta0) {
            if !src.is_valid_parameter(th) {
                return Err(OsarError::Config(format!("{}: θ₀ component {th} invalid", self.name)));
            }
        }
        if self.true_best >= self.num_solutions() {
            return Err(OsarError::Config(format!("{}: true best index out of range", self.name)));
        }
        if let Some(p) = &self.prior_pmf {
            if p.len() != self.support.points().len() || p.iter().any(|x| !(*x > 0.0)) {
                return Err(OsarError::Config(format!("{}: prior pmf must be positive, one entry per point", self.name)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    #[default]
    Discrete,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default)]
    pub support: SupportKind,
    pub theta0: Option<Vec<f64>>,
    pub costs: Option<Vec<f64>>,
    /// Points per axis of the fixed dense grid 𝒟 (continuous support).
    #[serde(default = "default_dense_axis")]
    pub dense_per_axis: usize,
}

fn default_scenario() -> Scenario {
    Scenario::Baseline
}

fn default_dense_axis() -> usize {
    51
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplyChainConfig {
    pub routing: Option<Routing>,
    /// TOML file with a `[routing]` table; ignored when `routing` is given inline.
    pub routing_file: Option<PathBuf>,
    pub theta0: Option<Vec<f64>>,
    pub costs: Option<Vec<f64>>,
    pub true_best: Option<usize>,
    #[serde(default = "default_sc_anchors")]
    pub anchors: usize,
    #[serde(default = "default_sc_dense")]
    pub dense_size: usize,
    /// Seed of the prior draws forming Θ⁺; shared by every macrorun.
    #[serde(default = "default_design_seed")]
    pub design_seed: u64,
}

fn default_sc_anchors() -> usize {
    100
}

fn default_sc_dense() -> usize {
    10_000
}

pub const DEFAULT_DESIGN_SEED: u64 = 7_202_301;

fn default_design_seed() -> u64 {
    DEFAULT_DESIGN_SEED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularConfig {
    #[serde(flatten)]
    pub table: TabularProblem,
    pub sources: Vec<InputSourceModel>,
    pub theta0: Vec<f64>,
    pub prior_pmf: Option<Vec<f64>>,
    pub settings: Option<SuggestedSettings>,
}

/// Problem section of an experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Synthetic(SyntheticConfig),
    SupplyChain(SupplyChainConfig),
    Tabular(TabularConfig),
}

impl ProblemConfig {
    pub fn synthetic(scenario: Scenario, support: SupportKind) -> Self {
        ProblemConfig::Synthetic(SyntheticConfig {
            scenario,
            support,
            theta0: None,
            costs: None,
            dense_per_axis: default_dense_axis(),
        })
    }

    pub fn supply_chain() -> Self {
        ProblemConfig::SupplyChain(SupplyChainConfig {
            routing: None,
            routing_file: None,
            theta0: None,
            costs: None,
            true_best: None,
            anchors: default_sc_anchors(),
            dense_size: default_sc_dense(),
            design_seed: DEFAULT_DESIGN_SEED,
        })
    }

    /// Build the problem; relative paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<ProblemSpec> {
        let spec = match self {
            ProblemConfig::Synthetic(c) => build_synthetic(c)?,
            ProblemConfig::SupplyChain(c) => build_supply_chain(c, base_dir)?,
            ProblemConfig::Tabular(c) => build_tabular(c)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn costs_or(costs: &Option<Vec<f64>>, default: &[f64]) -> Result<Vec<f64>> {
    let c = costs.clone().unwrap_or_else(|| default.to_vec());
    if c.len() != default.len() {
        return Err(OsarError::Config(format!("expected {} costs, got {}", default.len(), c.len())));
    }
    Ok(c)
}

fn build_synthetic(c: &SyntheticConfig) -> Result<ProblemSpec> {
    let sc = c.scenario;
    let default_theta0 = match c.support {
        SupportKind::Discrete => sc.theta0(),
        SupportKind::Continuous => synthetic::THETA0_CONTINUOUS,
    };
    let theta0 = c.theta0.clone().unwrap_or_else(|| default_theta0.to_vec());
    if theta0.len() != 2 {
        return Err(OsarError::Config("synthetic θ₀ must have two components".into()));
    }
    let costs = costs_or(&c.costs, &sc.costs())?;
    let sources = costs.iter().map(|&c| InputSourceModel::exponential(c)).collect::<Result<Vec<_>>>()?;
    let problem = SyntheticProblem::new(sc, [theta0[0], theta0[1]]);
    let means: Vec<f64> = (0..synthetic::NUM_SOLUTIONS).map(|i| problem.mean(i, &theta0)).collect::<Result<_>>()?;
    let true_best = argmin_lowest(&means);
    let (support, dense) = match c.support {
        SupportKind::Discrete => (ParameterSupport::discrete(synthetic::grid_121())?, Vec::new()),
        SupportKind::Continuous => {
            if c.dense_per_axis < 2 {
                return Err(OsarError::Config("dense_per_axis must be at least 2".into()));
            }
            (
                ParameterSupport::continuous(
                    synthetic::LOWER.to_vec(),
                    synthetic::UPPER.to_vec(),
                    synthetic::grid_121(),
                )?,
                synthetic::grid(c.dense_per_axis),
            )
        }
    };
    let kind = match c.support {
        SupportKind::Discrete => "discrete",
        SupportKind::Continuous => "continuous",
    };
    Ok(ProblemSpec {
        name: format!("synthetic-{kind}-{}", serde_json::to_value(sc)?.as_str().unwrap_or("scenario")),
        sources,
        theta0,
        support,
        prior_pmf: None,
        true_best,
        oracle: Arc::new(problem),
        dense,
        suggested: SuggestedSettings { m0: 50, n0: 1, epsilon: sc.epsilon(), delta: 50, budget: 4000 },
    })
}

/// Prior of every contamination rate: kernel (θ(1−θ))^0.5 on [0.1, 0.3].
pub fn supply_chain_source(cost: f64) -> Result<InputSourceModel> {
    InputSourceModel::new(
        InputFamily::TruncatedBeta { lower: supply_chain::RATE_LOWER, upper: supply_chain::RATE_UPPER },
        [0.5, 0.5],
        cost,
    )
}

fn build_supply_chain(c: &SupplyChainConfig, base_dir: &Path) -> Result<ProblemSpec> {
    let routing = match (&c.routing, &c.routing_file) {
        (Some(r), _) => r.clone(),
        (None, Some(p)) => Routing::from_file(&base_dir.join(p))?,
        (None, None) => Routing::default(),
    };
    let mut problem = SupplyChainProblem::new(routing)?;
    let theta0 = c.theta0.clone().unwrap_or_else(|| supply_chain::THETA0.to_vec());
    if theta0.len() != supply_chain::NUM_ARCS {
        return Err(OsarError::Config("supply-chain θ₀ must have ten components".into()));
    }
    problem.theta0.copy_from_slice(&theta0);
    let costs = costs_or(&c.costs, &[1.0; supply_chain::NUM_ARCS])?;
    let sources = costs.iter().map(|&c| supply_chain_source(c)).collect::<Result<Vec<_>>>()?;
    if c.anchors == 0 {
        return Err(OsarError::Config("supply chain needs at least one anchor".into()));
    }
    let lower = vec![supply_chain::RATE_LOWER; supply_chain::NUM_ARCS];
    let upper = vec![supply_chain::RATE_UPPER; supply_chain::NUM_ARCS];
    let mut rng = ChaCha8Rng::seed_from_u64(c.design_seed);
    let empty = SufficientStats::default();
    let anchors: Vec<Vec<f64>> = (0..c.anchors)
        .map(|_| sources.iter().enumerate().map(|(l, s)| s.sample_posterior(&empty, lower[l], upper[l], &mut rng)).collect())
        .collect();
    let dense = halton_design(&lower, &upper, c.dense_size);
    Ok(ProblemSpec {
        name: "supply-chain".into(),
        sources,
        theta0,
        support: ParameterSupport::continuous(lower, upper, anchors)?,
        prior_pmf: None,
        true_best: c.true_best.unwrap_or(supply_chain::TRUE_BEST),
        oracle: Arc::new(problem),
        dense,
        suggested: SuggestedSettings { m0: 5, n0: 5, epsilon: 1e-4, delta: 50, budget: 6000 },
    })
}

fn build_tabular(c: &TabularConfig) -> Result<ProblemSpec> {
    c.table.validate()?;
    let b = c.table.point_index(&c.theta0).ok();
    let true_best = match b {
        Some(b) => argmin_lowest(&c.table.means.iter().map(|row| row[b]).collect::<Vec<_>>()),
        None => return Err(OsarError::Config("tabular θ₀ must be one of the tabulated points".into())),
    };
    Ok(ProblemSpec {
        name: "tabular".into(),
        sources: c.sources.clone(),
        theta0: c.theta0.clone(),
        support: ParameterSupport::discrete(c.table.points.clone())?,
        prior_pmf: c.prior_pmf.clone(),
        true_best,
        oracle: Arc::new(c.table.clone()),
        dense: Vec::new(),
        suggested: c.settings.unwrap_or(SuggestedSettings { m0: 10, n0: 1, epsilon: 1e-3, delta: 50, budget: 10_000 }),
    })
}

/// Tabular problem spec built directly in code.
pub fn tabular_spec(
    table: TabularProblem,
    sources: Vec<InputSourceModel>,
    theta0: Vec<f64>,
    settings: SuggestedSettings,
) -> Result<ProblemSpec> {
    ProblemConfig::Tabular(TabularConfig { table, sources, theta0, prior_pmf: None, settings: Some(settings) })
        .build(Path::new("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_discrete_defaults() {
        let p = ProblemConfig::synthetic(Scenario::Baseline, SupportKind::Discrete).build(Path::new(".")).unwrap();
        assert_eq!(p.support.points().len(), 121);
        assert_eq!(p.true_best, 0);
        assert_eq!(p.num_solutions(), 10);
        assert_eq!(p.oracle.known_variance(3, &[2.0, 1.5]), Some(64.0));
        let s3 = ProblemConfig::synthetic(Scenario::Scenario3, SupportKind::Discrete).build(Path::new(".")).unwrap();
        assert_eq!(s3.costs(), vec![1.0, 2.0]);
    }

    #[test]
    fn synthetic_continuous_has_dense_grid() {
        let p = ProblemConfig::synthetic(Scenario::Baseline, SupportKind::Continuous).build(Path::new(".")).unwrap();
        assert_eq!(p.dense.len(), 2601);
        assert_eq!(p.support.points().len(), 121);
        assert!(!p.support.is_discrete());
        assert_eq!(p.true_best, 0);
    }

    #[test]
    fn supply_chain_spec() {
        let p = ProblemConfig::supply_chain().build(Path::new(".")).unwrap();
        assert_eq!(p.support.points().len(), 100);
        assert_eq!(p.dense.len(), 10_000);
        assert!(p.support.points().iter().flatten().all(|x| (0.1..=0.3).contains(x)));
        assert_eq!(p.true_best, 1);
        let again = ProblemConfig::supply_chain().build(Path::new(".")).unwrap();
        assert_eq!(p.support.points(), again.support.points());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = p.oracle.simulate(1, &p.theta0, &mut rng).unwrap();
        assert!((-525.0..0.0).contains(&y));
    }

    #[test]
    fn parses_toml_configs() {
        let text = r#"
            kind = "synthetic"
            scenario = "scenario3"
            support = "continuous"
        "#;
        let c: ProblemConfig = toml::from_str(text).unwrap();
        let p = c.build(Path::new(".")).unwrap();
        assert_eq!(p.costs(), vec![1.0, 2.0]);
        let bad = "kind = \"synthetic\"\nscenaro = \"baseline\"\n";
        assert!(toml::from_str::<ProblemConfig>(bad).is_err());
        let sc = "kind = \"supply_chain\"\nrouting_file = \"configs/supply_chain_routing.toml\"\nanchors = 5\ndense_size = 16\n";
        let c: ProblemConfig = toml::from_str(sc).unwrap();
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
        let p = c.build(&root).unwrap();
        assert_eq!(p.support.points().len(), 5);
        let tab = r#"
            kind = "tabular"
            points = [[1.0], [1.5]]
            means = [[0.0, 1.0], [1.0, 0.0]]
            stds = [[1.0, 1.0], [1.0, 1.0]]
            theta0 = [1.0]
            sources = [{ family = { kind = "exponential" }, prior = [-1.0, 0.0], cost = 1.0 }]
        "#;
        let c: ProblemConfig = toml::from_str(tab).unwrap();
        let p = c.build(Path::new(".")).unwrap();
        assert_eq!(p.true_best, 0);
    }
}
