//! Sequential input-data and simulation budget allocation.
//!
//! Each batch solves the plug-in max–min program for the current MAP,
//! draws binomial input and simulation counts from its solution, and
//! hands every point's simulation count to an R&S subroutine.

mod continuous;
mod discrete;

pub use continuous::run_osar_continuous;
pub use discrete::run_osar;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};
use crate::input_models::{argmax_lowest, log_sum_exp, posterior_preference, FavorableSets};
use crate::krr::MapReplication;
use crate::problems::{ProblemSpec, SuggestedSettings};
use crate::rates::{argmin_lowest, min_challenger_rate, GaussianArm};
use crate::rns_allocator::RnsSubroutine;

/// Mean estimator on a discrete support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    SampleMean,
    Krr,
}

/// How the continuous algorithm approximates the adversarial set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousVariant {
    /// Anchors plus the current MAP only.
    PlusPlus,
    /// Adds predicted-adversarial points of a fixed dense set.
    Fd,
    /// Like `Fd` with the dense set redrawn from the posterior every batch.
    Ps,
}

/// Algorithm selector used by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Osar,
    OsarPlus,
    OsarPlusPlus,
    OsarFd,
    OsarPs,
}

impl Algorithm {
    pub fn is_continuous(self) -> bool {
        matches!(self, Algorithm::OsarPlusPlus | Algorithm::OsarFd | Algorithm::OsarPs)
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Osar => "OSAR",
            Algorithm::OsarPlus => "OSAR+",
            Algorithm::OsarPlusPlus => "OSAR++",
            Algorithm::OsarFd => "OSAR+FD",
            Algorithm::OsarPs => "OSAR+PS",
        }
    }
}

fn default_kappa() -> f64 {
    1.0
}

/// Budget and tuning constants of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Expected budget per batch, Δ.
    pub delta: u64,
    pub epsilon: f64,
    /// Initial observations per input source.
    pub m0: usize,
    /// Initial replications per (solution, point).
    pub n0: u64,
    /// Total budget T.
    pub budget: u64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Size of the posterior-sampled dense set; defaults to the problem's fixed set size.
    #[serde(default)]
    pub dense_size: Option<usize>,
}

impl RunConfig {
    pub fn from_suggested(s: &SuggestedSettings) -> Self {
        Self { delta: s.delta, epsilon: s.epsilon, m0: s.m0, n0: s.n0, budget: s.budget, kappa: 1.0, dense_size: None }
    }

    fn validate(&self, live_points: usize, sources: usize) -> Result<()> {
        if self.delta == 0 {
            return Err(OsarError::Config("batch size must be positive".into()));
        }
        if self.m0 == 0 || self.n0 == 0 {
            return Err(OsarError::Config("initial sample sizes m0 and n0 must be positive".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(OsarError::Config("kappa must be positive".into()));
        }
        let floor = self.epsilon * (live_points + sources) as f64;
        if !(self.epsilon >= 0.0) || floor >= 1.0 {
            return Err(OsarError::Config(format!(
                "epsilon {} with {} points and {} sources violates ε(B+L) < 1",
                self.epsilon, live_points, sources
            )));
        }
        Ok(())
    }
}

/// Base seed and stream index of one macrorun.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeed {
    pub base: u64,
    pub stream: u64,
}

impl RunSeed {
    pub fn new(base: u64, stream: u64) -> Self {
        Self { base, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base);
        rng.set_stream(self.stream);
        rng
    }
}

/// Spend accounting of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total: u64,
    pub spent: f64,
    pub batches: u64,
    pub delta: u64,
    pub m0: usize,
    pub n0: u64,
    pub costs: Vec<f64>,
    /// Data counts m_ℓ.
    pub input_counts: Vec<u64>,
    /// Replication counts at the fixed points, `[i][b]`.
    pub sim_counts: Vec<Vec<u64>>,
    /// Replications at the moving MAP, per solution (continuous runs only).
    pub map_counts: Vec<u64>,
    /// MAP replications (θ̂_{i,r}, Y_r) per solution.
    pub map_history: Vec<Vec<MapReplication>>,
}

impl BudgetLedger {
    pub fn new(config: &RunConfig, costs: Vec<f64>, k: usize, points: usize, with_map: bool) -> Self {
        let l = costs.len();
        Self {
            total: config.budget,
            spent: 0.0,
            batches: 0,
            delta: config.delta,
            m0: config.m0,
            n0: config.n0,
            costs,
            input_counts: vec![0; l],
            sim_counts: vec![vec![0; points]; k],
            map_counts: if with_map { vec![0; k] } else { Vec::new() },
            map_history: if with_map { vec![Vec::new(); k] } else { Vec::new() },
        }
    }

    /// Cost of the initial design: m₀Σc_ℓ + Bkn₀.
    pub fn initial_cost(config: &RunConfig, costs: &[f64], k: usize, points: usize) -> f64 {
        config.m0 as f64 * costs.iter().sum::<f64>() + (points * k) as f64 * config.n0 as f64
    }

    pub fn record_inputs(&mut self, source: usize, count: u64) {
        self.input_counts[source] += count;
        self.spent += self.costs[source] * count as f64;
    }

    pub fn record_sims(&mut self, i: usize, b: usize, count: u64) {
        self.sim_counts[i][b] += count;
        self.spent += count as f64;
    }

    pub fn record_map(&mut self, i: usize, point: &[f64], y: f64, variance: f64) {
        self.map_counts[i] += 1;
        self.map_history[i].push(MapReplication { point: point.to_vec(), y, variance });
        self.spent += 1.0;
    }

    /// Spend recomputed from the counts alone.
    pub fn recomputed_spend(&self) -> f64 {
        let input: f64 = self.costs.iter().zip(&self.input_counts).map(|(c, &m)| c * m as f64).sum();
        let sims: u64 = self.sim_counts.iter().flatten().sum::<u64>() + self.map_counts.iter().sum::<u64>();
        input + sims as f64
    }

    pub fn simulations(&self) -> u64 {
        self.sim_counts.iter().flatten().sum::<u64>() + self.map_counts.iter().sum::<u64>()
    }

    fn input_shares(&self) -> Vec<f64> {
        self.costs.iter().zip(&self.input_counts).map(|(c, &m)| c * m as f64 / self.spent).collect()
    }

    /// Empirical α per live point (MAP last for continuous runs).
    fn point_shares(&self) -> Vec<f64> {
        let b = self.sim_counts.first().map_or(0, Vec::len);
        let mut out: Vec<f64> =
            (0..b).map(|j| self.sim_counts.iter().map(|row| row[j]).sum::<u64>() as f64 / self.spent).collect();
        if !self.map_counts.is_empty() {
            out.push(self.map_counts.iter().sum::<u64>() as f64 / self.spent);
        }
        out
    }
}

/// State recorded once per batch iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub batch: u64,
    pub spent: f64,
    pub best: usize,
    /// Posterior preference of `best`.
    pub preference: f64,
    /// log of the posterior mass outside the favorable set of `best`.
    pub log_miss: f64,
    /// Empirical input shares c_ℓ m_ℓ / t.
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: RunSeed,
    /// i*_T.
    pub best: usize,
    pub budget: u64,
    pub spent: f64,
    /// Spend beyond T from the final batch; the final batch is not truncated.
    pub overshoot: f64,
    pub input_counts: Vec<u64>,
    pub simulations: u64,
    /// Empirical α at the end, one entry per live point.
    pub alpha: Vec<f64>,
    /// Empirical β at the end.
    pub beta: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

impl RunResult {
    fn from_ledger(seed: RunSeed, best: usize, ledger: &BudgetLedger, snapshots: Vec<Snapshot>) -> Self {
        Self {
            seed,
            best,
            budget: ledger.total,
            spent: ledger.spent,
            overshoot: (ledger.spent - ledger.total as f64).max(0.0),
            input_counts: ledger.input_counts.clone(),
            simulations: ledger.simulations(),
            alpha: ledger.point_shares(),
            beta: ledger.input_shares(),
            snapshots,
        }
    }

    /// The last snapshot whose spend has not passed `budget`, if any.
    pub fn state_at(&self, budget: f64) -> Option<&Snapshot> {
        self.snapshots.iter().take_while(|s| s.spent <= budget).last()
    }

    /// The first snapshot whose spend reaches `budget`, if any.
    pub fn first_reaching(&self, budget: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.spent >= budget)
    }
}

/// Estimated MPB, the favorable-set partition and every solution's preference.
#[derive(Clone, Debug, PartialEq)]
pub struct MpbEstimate {
    pub best: usize,
    pub sets: FavorableSets,
    pub preference: Vec<f64>,
}

/// i^b = argmin_i means[i][b]; i* = argmax_j Σ_{b: i^b = j} pmf[b]. Ties go to the lowest index.
pub fn estimate_mpb(means: &[Vec<f64>], pmf: &[f64]) -> Result<MpbEstimate> {
    let k = means.len();
    let b = pmf.len();
    if k == 0 || means.iter().any(|row| row.len() != b) {
        return Err(OsarError::Contract("means must be k rows of one entry per point".into()));
    }
    if means.iter().flatten().any(|m| !m.is_finite()) {
        return Err(OsarError::Numerical("non-finite mean estimate".into()));
    }
    let owners: Vec<usize> = (0..b)
        .map(|j| argmin_lowest(&means.iter().map(|row| row[j]).collect::<Vec<_>>()))
        .collect();
    let sets = FavorableSets::from_owners(owners, k)?;
    let preference = posterior_preference(pmf, &sets)?;
    let best = argmax_lowest(&preference);
    Ok(MpbEstimate { best, sets, preference })
}

/// log Σ_{b ∉ favorable set of best} exp(log_weights[b]).
fn log_miss(log_weights: &[f64], est: &MpbEstimate) -> f64 {
    let outside: Vec<f64> = log_weights
        .iter()
        .zip(est.sets.owners())
        .filter(|(_, &o)| o != est.best)
        .map(|(w, _)| *w)
        .collect();
    if outside.is_empty() {
        f64::NEG_INFINITY
    } else {
        log_sum_exp(&outside)
    }
}

/// Within-point fractions N_i/ΣN_j; uniform while some solution has no replication.
fn empirical_fractions(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if counts.iter().any(|&c| c == 0) {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Plug-in G*(θ_b) from mean estimates, output stds and replication counts at one point.
fn plug_in_rate(means: &[f64], stds: &[f64], counts: &[u64], best: usize) -> f64 {
    let fr = empirical_fractions(counts);
    let arms: Vec<GaussianArm> = (0..means.len()).map(|i| GaussianArm::new(means[i], stds[i], fr[i])).collect();
    min_challenger_rate(&arms, best)
}

fn binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 || n == 0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(n);
    }
    Binomial::new(n, p)
        .map(|d| d.sample(rng))
        .map_err(|e| OsarError::Numerical(format!("binomial draw: {e}")))
}

/// Running mean and variance of one (solution, point) cell.
#[derive(Clone, Copy, Debug, Default)]
struct Cell {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Cell {
    fn push(&mut self, y: f64) {
        self.n += 1;
        let d = y - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (y - self.mean);
    }

    fn sample_variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }
}

const MIN_VARIANCE: f64 = 1e-12;

/// Per-solution fallback variance: the average sample variance of the cells
/// with at least two replications, or 1 when there are none.
fn fallback_variances(cells: &[Vec<Cell>]) -> Vec<f64> {
    cells
        .iter()
        .map(|row| {
            let v: Vec<f64> = row.iter().filter_map(Cell::sample_variance).collect();
            if v.is_empty() {
                1.0
            } else {
                (v.iter().sum::<f64>() / v.len() as f64).max(MIN_VARIANCE)
            }
        })
        .collect()
}

/// γ_i and kernel signal variance from the initial sample means of solution i.
fn krr_hyperparameters(initial_means: &[f64]) -> (f64, f64) {
    let n = initial_means.len() as f64;
    let gamma = initial_means.iter().sum::<f64>() / n;
    let var = if initial_means.len() > 1 {
        initial_means.iter().map(|m| (m - gamma).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (gamma, if var > 0.0 && var.is_finite() { var } else { 1.0 })
}

/// Dispatch by algorithm.
pub fn run(
    problem: &ProblemSpec,
    config: &RunConfig,
    algorithm: Algorithm,
    subroutine: &dyn RnsSubroutine,
    seed: RunSeed,
) -> Result<RunResult> {
    match algorithm {
        Algorithm::Osar => run_osar(problem, config, Estimator::SampleMean, subroutine, seed),
        Algorithm::OsarPlus => run_osar(problem, config, Estimator::Krr, subroutine, seed),
        Algorithm::OsarPlusPlus => run_osar_continuous(problem, config, ContinuousVariant::PlusPlus, subroutine, seed),
        Algorithm::OsarFd => run_osar_continuous(problem, config, ContinuousVariant::Fd, subroutine, seed),
        Algorithm::OsarPs => run_osar_continuous(problem, config, ContinuousVariant::Ps, subroutine, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mpb_two_by_two() {
        let est = estimate_mpb(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0.7, 0.3]).unwrap();
        assert_eq!(est.best, 0);
        assert_eq!(est.sets.set(0), vec![0]);
        assert_eq!(est.sets.set(1), vec![1]);
        assert!((est.preference.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mpb_all_equal_goes_to_first() {
        let est = estimate_mpb(&[vec![2.0; 3], vec![2.0; 3], vec![2.0; 3]], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(est.best, 0);
        assert!(est.sets.owners().iter().all(|&o| o == 0));
    }

    #[test]
    fn mpb_rejects_non_finite() {
        assert!(estimate_mpb(&[vec![f64::NAN], vec![0.0]], &[1.0]).is_err());
    }

    #[test]
    fn fractions_fall_back_to_uniform() {
        assert_eq!(empirical_fractions(&[0, 3]), vec![0.5, 0.5]);
        assert_eq!(empirical_fractions(&[1, 3]), vec![0.25, 0.75]);
    }

    #[test]
    fn welford_matches_two_pass() {
        let ys = [1.0, 4.0, 2.5, -3.0, 0.5];
        let mut c = Cell::default();
        ys.iter().for_each(|&y| c.push(y));
        let m = ys.iter().sum::<f64>() / 5.0;
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / 4.0;
        assert!((c.mean - m).abs() < 1e-14);
        assert!((c.sample_variance().unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn rng_streams_differ() {
        use rand::Rng;
        let a: u64 = RunSeed::new(5, 0).rng().random();
        let b: u64 = RunSeed::new(5, 1).rng().random();
        let c: u64 = RunSeed::new(5, 0).rng().random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
