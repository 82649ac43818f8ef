//! Parametric Bayesian input models.
//!
//! Each input source is a one-parameter family with a conjugate prior. The
//! posterior over a discrete parameter grid is kept as unnormalized log
//! weights (prior plus log-likelihood from sufficient statistics) so that a
//! batch of observations gives bitwise the same pmf whether it arrives at
//! once or split into consecutive pieces.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};

/// Data-generating family of one input source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputFamily {
    /// Exponential data parameterized by its mean θ. Prior hyperparameters
    /// `(a, b)` give the inverse-gamma kernel θ^-(a+1) exp(-b/θ); `(-1, 0)`
    /// is the flat prior.
    Exponential,
    /// Bernoulli indicators with success probability θ, prior kernel
    /// θ^a (1-θ)^b restricted to `[lower, upper]`.
    TruncatedBeta { lower: f64, upper: f64 },
}

/// One input data source: family, prior hyperparameters and per-observation cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSourceModel {
    pub family: InputFamily,
    pub prior: [f64; 2],
    pub cost: f64,
}

/// Count and sum of the retained observations of one source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub count: usize,
    pub sum: f64,
}

impl InputSourceModel {
    pub fn new(family: InputFamily, prior: [f64; 2], cost: f64) -> Result<Self> {
        if !(cost > 0.0 && cost.is_finite()) {
            return Err(OsarError::Domain(format!("source cost must be positive, got {cost}")));
        }
        if let InputFamily::TruncatedBeta { lower, upper } = family {
            if !(0.0 <= lower && lower < upper && upper <= 1.0) {
                return Err(OsarError::Domain(format!(
                    "truncated-beta bounds must satisfy 0 <= lower < upper <= 1, got [{lower}, {upper}]"
                )));
            }
        }
        Ok(Self { family, prior, cost })
    }

    /// Exponential source with a flat prior on the mean.
    pub fn exponential(cost: f64) -> Result<Self> {
        Self::new(InputFamily::Exponential, [-1.0, 0.0], cost)
    }

    pub fn is_valid_parameter(&self, theta: f64) -> bool {
        match self.family {
            InputFamily::Exponential => theta > 0.0 && theta.is_finite(),
            InputFamily::TruncatedBeta { .. } => theta > 0.0 && theta < 1.0,
        }
    }

    fn check_parameter(&self, theta: f64) -> Result<()> {
        if self.is_valid_parameter(theta) {
            Ok(())
        } else {
            Err(OsarError::Domain(format!("parameter {theta} is invalid for {:?}", self.family)))
        }
    }

    pub fn accepts_observation(&self, z: f64) -> bool {
        match self.family {
            InputFamily::Exponential => z > 0.0 && z.is_finite(),
            InputFamily::TruncatedBeta { .. } => z == 0.0 || z == 1.0,
        }
    }

    /// Log density (mass) of a single observation.
    pub fn log_density(&self, theta: f64, z: f64) -> f64 {
        match self.family {
            InputFamily::Exponential => -theta.ln() - z / theta,
            InputFamily::TruncatedBeta { .. } => {
                if z == 1.0 {
                    theta.ln()
                } else {
                    (1.0 - theta).ln()
                }
            }
        }
    }

    /// Log-likelihood of all observations summarized by `stats`.
    pub fn log_likelihood(&self, stats: &SufficientStats, theta: f64) -> f64 {
        let m = stats.count as f64;
        match self.family {
            InputFamily::Exponential => -m * theta.ln() - stats.sum / theta,
            InputFamily::TruncatedBeta { .. } => {
                stats.sum * theta.ln() + (m - stats.sum) * (1.0 - theta).ln()
            }
        }
    }

    /// Unnormalized log prior density; `-inf` outside the family's prior support.
    pub fn log_prior(&self, theta: f64) -> f64 {
        let [a, b] = self.prior;
        match self.family {
            InputFamily::Exponential => -(a + 1.0) * theta.ln() - b / theta,
            InputFamily::TruncatedBeta { lower, upper } => {
                if theta < lower || theta > upper {
                    f64::NEG_INFINITY
                } else {
                    a * theta.ln() + b * (1.0 - theta).ln()
                }
            }
        }
    }

    /// Conjugate posterior hyperparameters after the data in `stats`.
    pub fn posterior_hyperparams(&self, stats: &SufficientStats) -> [f64; 2] {
        let [a, b] = self.prior;
        let m = stats.count as f64;
        match self.family {
            InputFamily::Exponential => [a + m, b + stats.sum],
            InputFamily::TruncatedBeta { .. } => [a + stats.sum, b + (m - stats.sum)],
        }
    }

    /// Unconstrained posterior mode, `None` when the posterior kernel has no interior mode.
    pub fn posterior_mode(&self, stats: &SufficientStats) -> Option<f64> {
        let [a, b] = self.posterior_hyperparams(stats);
        match self.family {
            InputFamily::Exponential => {
                let shape = a + 1.0;
                (shape > 0.0 && b > 0.0).then(|| b / shape)
            }
            InputFamily::TruncatedBeta { .. } => {
                if a >= 0.0 && b >= 0.0 && a + b > 0.0 {
                    Some(a / (a + b))
                } else {
                    None
                }
            }
        }
    }

    /// One draw from f_θ.
    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        match self.family {
            InputFamily::Exponential => {
                let d = Exp::new(1.0 / theta).expect("positive rate");
                loop {
                    let z: f64 = d.sample(rng);
                    if z > 0.0 {
                        return z;
                    }
                }
            }
            InputFamily::TruncatedBeta { .. } => {
                if rng.random::<f64>() < theta {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Draw from the posterior restricted to `[lower, upper]`.
    ///
    /// Rejection from the untruncated conjugate law first; if the box holds
    /// too little posterior mass, falls back to inverse-CDF sampling on a
    /// fine grid of the box.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        stats: &SufficientStats,
        lower: f64,
        upper: f64,
        rng: &mut R,
    ) -> f64 {
        let [a, b] = self.posterior_hyperparams(stats);
        for _ in 0..64 {
            let draw = match self.family {
                InputFamily::Exponential => {
                    // θ^-(a+1) e^{-b/θ}  <=>  1/θ ~ Gamma(a, rate b)
                    if a <= 0.0 || b <= 0.0 {
                        break;
                    }
                    let g = Gamma::new(a, 1.0 / b).expect("valid gamma");
                    let rate: f64 = g.sample(rng);
                    1.0 / rate
                }
                InputFamily::TruncatedBeta { .. } => {
                    if a <= -1.0 || b <= -1.0 {
                        break;
                    }
                    let d = Beta::new(a + 1.0, b + 1.0).expect("valid beta");
                    d.sample(rng)
                }
            };
            if draw >= lower && draw <= upper {
                return draw;
            }
        }
        self.sample_posterior_on_grid(stats, lower, upper, rng)
    }

    fn sample_posterior_on_grid<R: Rng + ?Sized>(
        &self,
        stats: &SufficientStats,
        lower: f64,
        upper: f64,
        rng: &mut R,
    ) -> f64 {
        const CELLS: usize = 2048;
        let width = (upper - lower) / CELLS as f64;
        let logs: Vec<f64> = (0..CELLS)
            .map(|c| {
                let th = lower + (c as f64 + 0.5) * width;
                self.log_prior(th) + self.log_likelihood(stats, th)
            })
            .collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (c, w) in weights.iter().enumerate() {
            if u < *w {
                return lower + (c as f64 + rng.random::<f64>()) * width;
            }
            u -= w;
        }
        upper - 0.5 * width
    }
}

/// Exact KL divergence of f_{θ_from} from f_{θ_to}.
pub fn kl_divergence(family: InputFamily, theta_from: f64, theta_to: f64) -> Result<f64> {
    match family {
        InputFamily::Exponential => {
            if !(theta_from > 0.0 && theta_to > 0.0) {
                return Err(OsarError::Domain(format!(
                    "exponential means must be positive, got {theta_from}, {theta_to}"
                )));
            }
            let r = theta_from / theta_to;
            Ok((r - 1.0 - r.ln()).max(0.0))
        }
        InputFamily::TruncatedBeta { .. } => {
            let (p, q) = (theta_from, theta_to);
            if !(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0) {
                return Err(OsarError::Domain(format!(
                    "bernoulli probabilities must lie in (0, 1), got {p}, {q}"
                )));
            }
            Ok((p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()).max(0.0))
        }
    }
}

/// Parameter support of the full input vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParameterSupport {
    DiscreteGrid { points: Vec<Vec<f64>> },
    ContinuousBox { lower: Vec<f64>, upper: Vec<f64>, anchors: Vec<Vec<f64>> },
}

impl ParameterSupport {
    pub fn discrete(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(OsarError::Domain("a discrete support needs at least two points".into()));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(OsarError::Domain("support points have mixed dimensions".into()));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return Err(OsarError::Domain(format!("support points {j} and {i} coincide")));
                }
            }
        }
        Ok(Self::DiscreteGrid { points })
    }

    pub fn continuous(lower: Vec<f64>, upper: Vec<f64>, anchors: Vec<Vec<f64>>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(OsarError::Domain("box bounds must satisfy lower < upper".into()));
        }
        for (j, a) in anchors.iter().enumerate() {
            if a.len() != lower.len()
                || a.iter().zip(lower.iter().zip(&upper)).any(|(x, (l, u))| x < l || x > u)
            {
                return Err(OsarError::Domain(format!("anchor {j} lies outside the box")));
            }
        }
        Ok(Self::ContinuousBox { lower, upper, anchors })
    }

    /// Grid points (discrete) or anchors Θ⁺ (continuous).
    pub fn points(&self) -> &[Vec<f64>] {
        match self {
            Self::DiscreteGrid { points } => points,
            Self::ContinuousBox { anchors, .. } => anchors,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::DiscreteGrid { points } => points[0].len(),
            Self::ContinuousBox { lower, .. } => lower.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::DiscreteGrid { .. })
    }
}

/// Partition of support-point indices by owning solution (conditional optimum).
#[derive(Clone, Debug, PartialEq)]
pub struct FavorableSets {
    owner: Vec<usize>,
    num_solutions: usize,
}

impl FavorableSets {
    pub fn from_owners(owner: Vec<usize>, num_solutions: usize) -> Result<Self> {
        if let Some(o) = owner.iter().find(|&&o| o >= num_solutions) {
            return Err(OsarError::Contract(format!("owner {o} exceeds solution count {num_solutions}")));
        }
        Ok(Self { owner, num_solutions })
    }

    /// Build from explicit per-solution index sets, checking they partition `0..num_points`.
    pub fn from_sets(sets: &[Vec<usize>], num_points: usize) -> Result<Self> {
        let mut owner = vec![usize::MAX; num_points];
        for (i, set) in sets.iter().enumerate() {
            for &b in set {
                if b >= num_points {
                    return Err(OsarError::Contract(format!("point index {b} out of range")));
                }
                if owner[b] != usize::MAX {
                    return Err(OsarError::Contract(format!("point {b} appears in two favorable sets")));
                }
                owner[b] = i;
            }
        }
        if let Some(b) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(OsarError::Contract(format!("point {b} belongs to no favorable set")));
        }
        Ok(Self { owner, num_solutions: sets.len() })
    }

    pub fn owner(&self, b: usize) -> usize {
        self.owner[b]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    pub fn num_solutions(&self) -> usize {
        self.num_solutions
    }

    pub fn set(&self, i: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&b| self.owner[b] == i).collect()
    }
}

/// Posterior mass of each solution's favorable set.
pub fn posterior_preference(pmf: &[f64], sets: &FavorableSets) -> Result<Vec<f64>> {
    if pmf.len() != sets.owner.len() {
        return Err(OsarError::Contract(format!(
            "pmf has {} points but the partition covers {}",
            pmf.len(),
            sets.owner.len()
        )));
    }
    let mut pref = vec![0.0; sets.num_solutions];
    for (p, &o) in pmf.iter().zip(&sets.owner) {
        pref[o] += p;
    }
    Ok(pref)
}

#[derive(Clone, Debug)]
struct GridPosterior {
    points: Vec<Vec<f64>>,
    log_prior: Vec<f64>,
    log_weight: Vec<f64>,
    pmf: Vec<f64>,
}

/// Joint posterior of the independent input sources.
#[derive(Clone, Debug)]
pub struct PosteriorState {
    sources: Vec<InputSourceModel>,
    stats: Vec<SufficientStats>,
    observations: Vec<Vec<f64>>,
    grid: Option<GridPosterior>,
}

impl PosteriorState {
    /// Posterior over a discrete grid with a uniform prior pmf.
    pub fn discrete(sources: Vec<InputSourceModel>, points: Vec<Vec<f64>>) -> Result<Self> {
        let b = points.len();
        Self::discrete_with_prior(sources, points, vec![1.0 / b as f64; b])
    }

    pub fn discrete_with_prior(
        sources: Vec<InputSourceModel>,
        points: Vec<Vec<f64>>,
        prior_pmf: Vec<f64>,
    ) -> Result<Self> {
        if prior_pmf.len() != points.len() {
            return Err(OsarError::Contract("prior pmf length differs from point count".into()));
        }
        for (j, p) in points.iter().enumerate() {
            if p.len() != sources.len() {
                return Err(OsarError::Contract(format!("point {j} has wrong dimension")));
            }
            for (src, &th) in sources.iter().zip(p) {
                src.check_parameter(th)?;
            }
        }
        let log_prior: Vec<f64> = prior_pmf.iter().map(|p| p.ln()).collect();
        let l = sources.len();
        let mut state = Self {
            sources,
            stats: vec![SufficientStats::default(); l],
            observations: vec![Vec::new(); l],
            grid: Some(GridPosterior {
                points,
                log_weight: log_prior.clone(),
                log_prior,
                pmf: Vec::new(),
            }),
        };
        state.refresh_grid();
        Ok(state)
    }

    /// Posterior for a continuous support: only sufficient statistics and the data log.
    pub fn continuous(sources: Vec<InputSourceModel>) -> Self {
        let l = sources.len();
        Self {
            sources,
            stats: vec![SufficientStats::default(); l],
            observations: vec![Vec::new(); l],
            grid: None,
        }
    }

    pub fn sources(&self) -> &[InputSourceModel] {
        &self.sources
    }

    pub fn stats(&self, source: usize) -> &SufficientStats {
        &self.stats[source]
    }

    pub fn observation_count(&self, source: usize) -> usize {
        self.stats[source].count
    }

    pub fn observations(&self, source: usize) -> &[f64] {
        &self.observations[source]
    }

    /// Grid pmf; empty for the continuous kind.
    pub fn pmf(&self) -> &[f64] {
        self.grid.as_ref().map(|g| g.pmf.as_slice()).unwrap_or(&[])
    }

    /// Normalized log pmf on the grid.
    pub fn log_pmf(&self) -> Vec<f64> {
        match &self.grid {
            Some(g) => {
                let lse = log_sum_exp(&g.log_weight);
                g.log_weight.iter().map(|w| w - lse).collect()
            }
            None => Vec::new(),
        }
    }

    /// Add observations from one source; rejects values outside the family support.
    pub fn update(&mut self, source: usize, observations: &[f64]) -> Result<()> {
        if source >= self.sources.len() {
            return Err(OsarError::Contract(format!("source index {source} out of range")));
        }
        if observations.is_empty() {
            return Ok(());
        }
        let model = &self.sources[source];
        if let Some(&bad) = observations.iter().find(|&&z| !model.accepts_observation(z)) {
            return Err(OsarError::RejectedInput { source_index: source, value: bad });
        }
        let st = &mut self.stats[source];
        for &z in observations {
            st.count += 1;
            st.sum += z;
        }
        self.observations[source].extend_from_slice(observations);
        self.refresh_grid();
        Ok(())
    }

    /// Value-returning form of [`PosteriorState::update`].
    pub fn updated(&self, source: usize, observations: &[f64]) -> Result<Self> {
        let mut next = self.clone();
        next.update(source, observations)?;
        Ok(next)
    }

    fn refresh_grid(&mut self) {
        let Some(grid) = self.grid.as_mut() else { return };
        for (b, point) in grid.points.iter().enumerate() {
            let mut lw = grid.log_prior[b];
            for ((src, st), &th) in self.sources.iter().zip(&self.stats).zip(point) {
                if st.count > 0 {
                    lw += src.log_likelihood(st, th);
                }
            }
            grid.log_weight[b] = lw;
        }
        let mx = grid.log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = grid.log_weight.iter().map(|w| (w - mx).exp()).collect();
        let total: f64 = raw.iter().sum();
        grid.pmf = raw.into_iter().map(|r| r / total).collect();
    }

    /// Unnormalized log posterior density at an arbitrary parameter vector.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        self.sources
            .iter()
            .zip(&self.stats)
            .zip(theta)
            .map(|((src, st), &th)| {
                if !src.is_valid_parameter(th) {
                    return f64::NEG_INFINITY;
                }
                src.log_prior(th) + if st.count > 0 { src.log_likelihood(st, th) } else { 0.0 }
            })
            .sum()
    }

    /// Posterior weights of a finite point set, normalized over that set.
    pub fn normalized_weights(&self, points: &[Vec<f64>]) -> Vec<f64> {
        let logs: Vec<f64> = points.iter().map(|p| self.log_density(p)).collect();
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    /// MAP estimate. Discrete: pmf argmax (lowest index on ties). Continuous:
    /// per-source conjugate mode clamped into the box.
    pub fn map_estimate(&self, support: &ParameterSupport) -> Vec<f64> {
        match support {
            ParameterSupport::DiscreteGrid { points } => {
                let pmf = self.pmf();
                points[argmax_lowest(pmf)].clone()
            }
            ParameterSupport::ContinuousBox { lower, upper, .. } => self
                .sources
                .iter()
                .zip(&self.stats)
                .enumerate()
                .map(|(l, (src, st))| {
                    let mode = src.posterior_mode(st).unwrap_or(0.5 * (lower[l] + upper[l]));
                    mode.clamp(lower[l], upper[l])
                })
                .collect(),
        }
    }

    /// Index of the grid MAP point.
    pub fn map_index(&self) -> Option<usize> {
        self.grid.as_ref().map(|g| argmax_lowest(&g.pmf))
    }

    /// Empirical KL estimate (1/m) Σ log f_θ̂(Z_j)/f_θb(Z_j), without the clamp at 0.
    pub fn empirical_kl_unclamped(&self, source: usize, theta_hat: f64, theta_b: f64) -> Result<f64> {
        let src = &self.sources[source];
        let st = &self.stats[source];
        if st.count == 0 {
            return Err(OsarError::Contract(format!("source {source} has no observations")));
        }
        src.check_parameter(theta_hat)?;
        src.check_parameter(theta_b)?;
        if theta_hat == theta_b {
            return Ok(0.0);
        }
        let diff = src.log_likelihood(st, theta_hat) - src.log_likelihood(st, theta_b);
        if !diff.is_finite() {
            return Err(OsarError::Domain(format!(
                "zero density at a retained observation of source {source}"
            )));
        }
        Ok(diff / st.count as f64)
    }

    /// Empirical KL estimate clamped below at 0, as consumed by the allocation program.
    pub fn empirical_kl(&self, source: usize, theta_hat: f64, theta_b: f64) -> Result<f64> {
        Ok(self.empirical_kl_unclamped(source, theta_hat, theta_b)?.max(0.0))
    }

    /// One joint draw from the posterior restricted to the box.
    pub fn sample<R: Rng + ?Sized>(&self, lower: &[f64], upper: &[f64], rng: &mut R) -> Vec<f64> {
        self.sources
            .iter()
            .zip(&self.stats)
            .enumerate()
            .map(|(l, (src, st))| src.sample_posterior(st, lower[l], upper[l], rng))
            .collect()
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let mx = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + values.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp_source() -> InputSourceModel {
        InputSourceModel::exponential(1.0).unwrap()
    }

    #[test]
    fn two_point_update_matches_hand_densities() {
        let mut st = PosteriorState::discrete(vec![exp_source()], vec![vec![1.0], vec![2.0]]).unwrap();
        st.update(0, &[1.0]).unwrap();
        // f_1(1) = e^-1, f_2(1) = e^-0.5 / 2
        let w1 = (-1.0f64).exp();
        let w2 = 0.5 * (-0.5f64).exp();
        assert_relative_eq!(st.pmf()[0], w1 / (w1 + w2), epsilon = 1e-14);
        assert_relative_eq!(st.pmf()[0], 0.54814, epsilon = 1e-5);
        assert_relative_eq!(st.pmf()[1], 0.45186, epsilon = 1e-5);
    }

    #[test]
    fn empty_update_is_identity() {
        let st = PosteriorState::discrete(vec![exp_source()], vec![vec![1.0], vec![2.0]]).unwrap();
        let next = st.updated(0, &[]).unwrap();
        assert_eq!(st.pmf(), next.pmf());
        assert_eq!(next.observation_count(0), 0);
    }

    #[test]
    fn rejects_out_of_support_observation() {
        let mut st = PosteriorState::discrete(vec![exp_source()], vec![vec![1.0], vec![2.0]]).unwrap();
        let err = st.update(0, &[1.0, -0.5]).unwrap_err();
        assert!(matches!(err, OsarError::RejectedInput { source_index: 0, value } if value == -0.5));
        assert_eq!(st.observation_count(0), 0);

        let beta = InputSourceModel::new(InputFamily::TruncatedBeta { lower: 0.1, upper: 0.3 }, [0.5, 0.5], 1.0)
            .unwrap();
        let mut cs = PosteriorState::continuous(vec![beta]);
        assert!(cs.update(0, &[0.5]).is_err());
    }

    #[test]
    fn truncated_beta_conjugate_update() {
        let beta = InputSourceModel::new(InputFamily::TruncatedBeta { lower: 0.1, upper: 0.3 }, [0.5, 0.5], 1.0)
            .unwrap();
        let mut st = PosteriorState::continuous(vec![beta.clone()]);
        st.update(0, &[1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(beta.posterior_hyperparams(st.stats(0)), [0.5 + 2.0, 0.5 + 3.0]);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(InputSourceModel::exponential(0.0).is_err());
        assert!(InputSourceModel::new(InputFamily::TruncatedBeta { lower: 0.3, upper: 0.1 }, [0.5, 0.5], 1.0).is_err());
        assert!(ParameterSupport::discrete(vec![vec![1.0]]).is_err());
        assert!(ParameterSupport::discrete(vec![vec![1.0], vec![1.0]]).is_err());
        assert!(ParameterSupport::continuous(vec![1.0], vec![2.0], vec![vec![2.5]]).is_err());
    }

    #[test]
    fn map_discrete_argmax_and_ties() {
        let pts = vec![vec![1.0], vec![2.0], vec![3.0]];
        let support = ParameterSupport::discrete(pts.clone()).unwrap();
        let st = PosteriorState::discrete_with_prior(vec![exp_source()], pts.clone(), vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(st.map_estimate(&support), vec![2.0]);
        let tied = PosteriorState::discrete_with_prior(vec![exp_source()], pts, vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(tied.map_estimate(&support), vec![1.0]);
    }

    #[test]
    fn map_continuous_clamps() {
        let beta = InputSourceModel::new(InputFamily::TruncatedBeta { lower: 0.1, upper: 0.3 }, [0.5, 0.5], 1.0)
            .unwrap();
        let mut st = PosteriorState::continuous(vec![beta]);
        // posterior exponents (0.5 + 1, 0.5 + 29) -> mode 1.5 / 31 ≈ 0.048
        let mut data = vec![0.0; 29];
        data.push(1.0);
        st.update(0, &data).unwrap();
        let support = ParameterSupport::continuous(vec![0.1], vec![0.3], vec![vec![0.2]]).unwrap();
        assert_eq!(st.map_estimate(&support), vec![0.1]);

        let mut e = PosteriorState::continuous(vec![exp_source()]);
        e.update(0, &[1.5, 2.5]).unwrap();
        let sup = ParameterSupport::continuous(vec![1.0], vec![3.0], vec![]).unwrap();
        assert_relative_eq!(e.map_estimate(&sup)[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn exponential_kl_values() {
        assert_eq!(kl_divergence(InputFamily::Exponential, 1.6, 1.6).unwrap(), 0.0);
        let v = kl_divergence(InputFamily::Exponential, 1.0, 2.0).unwrap();
        // independent oracle: midpoint quadrature of ∫ f1 log(f1/f2) on [0, 60]
        let n = 600_000;
        let h = 60.0 / n as f64;
        let mut quad = 0.0;
        for j in 0..n {
            let z = (j as f64 + 0.5) * h;
            let f1 = (-z).exp();
            let f2 = 0.5 * (-z / 2.0).exp();
            quad += f1 * (f1 / f2).ln() * h;
        }
        assert_relative_eq!(v, quad, epsilon = 1e-8);
        assert_relative_eq!(v, 2f64.ln() - 0.5, epsilon = 1e-15);
        assert!(kl_divergence(InputFamily::Exponential, -1.0, 2.0).is_err());
    }

    #[test]
    fn bernoulli_kl_matches_support_sum() {
        let fam = InputFamily::TruncatedBeta { lower: 0.1, upper: 0.3 };
        let m = InputSourceModel::new(fam, [0.5, 0.5], 1.0).unwrap();
        for &(p, q) in &[(0.15, 0.25), (0.3, 0.1), (0.2, 0.2)] {
            let direct: f64 = [0.0, 1.0]
                .iter()
                .map(|&z| {
                    let fp = m.log_density(p, z).exp();
                    fp * (m.log_density(p, z) - m.log_density(q, z))
                })
                .sum();
            assert_relative_eq!(kl_divergence(fam, p, q).unwrap(), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn empirical_kl_single_observation() {
        let mut st = PosteriorState::continuous(vec![exp_source()]);
        st.update(0, &[1.0]).unwrap();
        assert_eq!(st.empirical_kl(0, 1.3, 1.3).unwrap(), 0.0);
        let v = st.empirical_kl(0, 1.0, 2.0).unwrap();
        let hand = (-1.0) - (-(2f64.ln()) - 0.5);
        assert_relative_eq!(v, hand, epsilon = 1e-15);
        assert_relative_eq!(v, 0.19315, epsilon = 1e-5);
        // clamp: data at z=1 favors θ=1 over θ=2, so the reverse is negative
        assert!(st.empirical_kl_unclamped(0, 2.0, 1.0).unwrap() < 0.0);
        assert_eq!(st.empirical_kl(0, 2.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn empirical_kl_matches_direct_sum_over_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src = exp_source();
        let data: Vec<f64> = (0..500).map(|_| src.sample(1.4, &mut rng)).collect();
        let mut st = PosteriorState::continuous(vec![src.clone()]);
        st.update(0, &data).unwrap();
        let direct: f64 = st
            .observations(0)
            .iter()
            .map(|&z| src.log_density(1.4, z) - src.log_density(2.2, z))
            .sum::<f64>()
            / data.len() as f64;
        assert_relative_eq!(st.empirical_kl_unclamped(0, 1.4, 2.2).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn empirical_kl_consistency_large_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = exp_source();
        let data: Vec<f64> = (0..100_000).map(|_| src.sample(1.6, &mut rng)).collect();
        let per_obs: Vec<f64> = data.iter().map(|&z| src.log_density(1.6, z) - src.log_density(2.0, z)).collect();
        let mean = per_obs.iter().sum::<f64>() / per_obs.len() as f64;
        let var = per_obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (per_obs.len() - 1) as f64;
        let se = (var / per_obs.len() as f64).sqrt();
        let mut st = PosteriorState::continuous(vec![src]);
        st.update(0, &data).unwrap();
        let est = st.empirical_kl_unclamped(0, 1.6, 2.0).unwrap();
        let truth = kl_divergence(InputFamily::Exponential, 1.6, 2.0).unwrap();
        assert!((est - truth).abs() < 3.0 * se, "est {est} truth {truth} se {se}");
    }

    #[test]
    fn preference_counts_mass() {
        let sets = FavorableSets::from_owners(vec![0, 0, 0, 0], 3).unwrap();
        assert_eq!(posterior_preference(&[0.1, 0.2, 0.3, 0.4], &sets).unwrap(), vec![1.0, 0.0, 0.0]);
        let sets = FavorableSets::from_sets(&[vec![0, 1, 3], vec![2]], 4).unwrap();
        assert_eq!(posterior_preference(&[0.25; 4], &sets).unwrap(), vec![0.75, 0.25]);
        assert!(FavorableSets::from_sets(&[vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(FavorableSets::from_sets(&[vec![0], vec![2]], 3).is_err());
    }

    #[test]
    fn posterior_sampling_stays_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = PosteriorState::continuous(vec![exp_source(), exp_source()]);
        let d0: Vec<f64> = (0..200).map(|_| exp_source().sample(1.57, &mut rng)).collect();
        let d1: Vec<f64> = (0..200).map(|_| exp_source().sample(1.41, &mut rng)).collect();
        st.update(0, &d0).unwrap();
        st.update(1, &d1).unwrap();
        for _ in 0..500 {
            let th = st.sample(&[1.0, 1.0], &[3.0, 2.0], &mut rng);
            assert!((1.0..=3.0).contains(&th[0]) && (1.0..=2.0).contains(&th[1]));
        }
        // box far out in the tail exercises the grid fallback
        for _ in 0..50 {
            let th = st.sample(&[5.0, 5.0], &[6.0, 6.0], &mut rng);
            assert!((5.0..=6.0).contains(&th[0]));
        }
    }

    proptest! {
        #[test]
        fn pmf_normalized_and_split_invariant(
            data in proptest::collection::vec(0.01f64..8.0, 1..40),
            split in 0usize..40,
        ) {
            let pts: Vec<Vec<f64>> = (0..11).map(|j| vec![1.0 + 0.2 * j as f64]).collect();
            let mut whole = PosteriorState::discrete(vec![exp_source()], pts.clone()).unwrap();
            whole.update(0, &data).unwrap();
            let cut = split.min(data.len());
            let mut parts = PosteriorState::discrete(vec![exp_source()], pts).unwrap();
            parts.update(0, &data[..cut]).unwrap();
            parts.update(0, &data[cut..]).unwrap();
            prop_assert_eq!(whole.pmf(), parts.pmf());
            let s: f64 = whole.pmf().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(whole.pmf().iter().all(|&p| p >= 0.0));
            let support = ParameterSupport::discrete((0..11).map(|j| vec![1.0 + 0.2 * j as f64]).collect()).unwrap();
            let map = whole.map_estimate(&support);
            let idx = support.points().iter().position(|p| *p == map).unwrap();
            prop_assert!(whole.pmf().iter().all(|&p| p <= whole.pmf()[idx]));
        }

        #[test]
        fn kl_nonnegative_and_zero_on_diagonal(a in 0.05f64..10.0, b in 0.05f64..10.0, p in 0.01f64..0.99, q in 0.01f64..0.99) {
            prop_assert!(kl_divergence(InputFamily::Exponential, a, b).unwrap() >= 0.0);
            prop_assert_eq!(kl_divergence(InputFamily::Exponential, a, a).unwrap(), 0.0);
            let fam = InputFamily::TruncatedBeta { lower: 0.0, upper: 1.0 };
            prop_assert!(kl_divergence(fam, p, q).unwrap() >= 0.0);
            prop_assert_eq!(kl_divergence(fam, p, p).unwrap(), 0.0);
        }

        #[test]
        fn preference_sums_to_one(owners in proptest::collection::vec(0usize..5, 2..60)) {
            let n = owners.len();
            let pmf: Vec<f64> = (0..n).map(|j| j as f64 + 1.0).collect();
            let tot: f64 = pmf.iter().sum();
            let pmf: Vec<f64> = pmf.iter().map(|p| p / tot).collect();
            let sets = FavorableSets::from_owners(owners, 5).unwrap();
            let pref = posterior_preference(&pmf, &sets).unwrap();
            prop_assert!((pref.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
