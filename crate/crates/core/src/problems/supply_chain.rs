//! Two-stage food supply chain with contamination on every transit arc.
//!
//! Centers 1–3 receive raw material; 1 → {4, 5}, 2 → {4, 5, 6}, 3 → {5, 6};
//! 4, 5, 6 → retailer (7). θ lists the arc contamination rates in the order
//! c14, c15, c24, c25, c26, c35, c36, c47, c57, c67.

use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{OsarError, Result};

pub const NUM_CENTERS: usize = 6;
pub const NUM_ARCS: usize = 10;
pub const RATE_LOWER: f64 = 0.1;
pub const RATE_UPPER: f64 = 0.3;
pub const THETA0: [f64; NUM_ARCS] = [0.1516, 0.2384, 0.2707, 0.2986, 0.2987, 0.2121, 0.1556, 0.1485, 0.1110, 0.1478];
/// Correct selection: center 2 (0-based index 1).
pub const TRUE_BEST: usize = 1;
pub const ARC_LABELS: [&str; NUM_ARCS] = ["c14", "c15", "c24", "c25", "c26", "c35", "c36", "c47", "c57", "c67"];
/// (from center, to center) of each arc, 1-based as in the network drawing.
pub const ARCS: [(usize, usize); NUM_ARCS] = [(1, 4), (1, 5), (2, 4), (2, 5), (2, 6), (3, 5), (3, 6), (4, 7), (5, 7), (6, 7)];

/// Outbound routing probabilities of the first-stage centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    /// Center 1 to centers 4 and 5.
    pub center1: [f64; 2],
    /// Center 2 to centers 4, 5 and 6.
    pub center2: [f64; 3],
    /// Center 3 to centers 5 and 6.
    pub center3: [f64; 2],
}

#[derive(Deserialize)]
struct RoutingFile {
    routing: Routing,
}

impl Default for Routing {
    /// Uniform over each center's outbound arcs.
    fn default() -> Self {
        Self { center1: [0.5, 0.5], center2: [1.0 / 3.0; 3], center3: [0.5, 0.5] }
    }
}

impl Routing {
    pub fn validate(&self) -> Result<()> {
        let rows: [(&str, &[f64]); 3] =
            [("center1", &self.center1), ("center2", &self.center2), ("center3", &self.center3)];
        for (name, row) in rows {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(OsarError::Config(format!("routing row {name} has a probability outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(OsarError::Config(format!("routing row {name} sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    /// Parse a `[routing]` table from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: RoutingFile = toml::from_str(text).map_err(|e| OsarError::Config(e.to_string()))?;
        f.routing.validate()?;
        Ok(f.routing)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Outcome of one replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Replication {
    pub raw_total: u64,
    pub delivered: u64,
    pub discarded: u64,
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Multinomial split by conditional binomials.
fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = Vec::with_capacity(probs.len());
    let mut left = n;
    let mut mass = 1.0;
    for (j, &p) in probs.iter().enumerate() {
        if j + 1 == probs.len() {
            out.push(left);
            break;
        }
        let x = if mass > 0.0 { binomial(left, (p / mass).min(1.0), rng) } else { 0 };
        out.push(x);
        left -= x;
        mass -= p;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupplyChainProblem {
    pub routing: Routing,
    pub theta0: [f64; NUM_ARCS],
    /// Replications averaged into one simulation output.
    pub batch: usize,
}

impl Default for SupplyChainProblem {
    fn default() -> Self {
        Self { routing: Routing::default(), theta0: THETA0, batch: 10 }
    }
}

impl SupplyChainProblem {
    pub fn new(routing: Routing) -> Result<Self> {
        routing.validate()?;
        Ok(Self { routing, ..Self::default() })
    }

    /// One end-to-end replication with the facility at center `install` (0-based).
    pub fn replicate<R: Rng + ?Sized>(&self, install: usize, theta: &[f64], rng: &mut R) -> Result<Replication> {
        if install >= NUM_CENTERS {
            return Err(OsarError::Domain(format!("center index {install} out of range")));
        }
        if theta.len() != NUM_ARCS || theta.iter().any(|c| !(RATE_LOWER..=RATE_UPPER).contains(c)) {
            return Err(OsarError::Domain(format!("contamination rates {theta:?} outside [0.1, 0.3]")));
        }
        Ok(self.replicate_unchecked(install, theta, rng))
    }

    pub(crate) fn replicate_unchecked<R: Rng + ?Sized>(&self, install: usize, theta: &[f64], rng: &mut R) -> Replication {
        let rate = |arc: usize| if ARCS[arc].0 == install + 1 { 0.0 } else { theta[arc] };
        let raw_total: u64 = rng.random_range(475..=525);
        let q = multinomial(raw_total, &[1.0 / 3.0; 3], rng);
        let mut flows = [0u64; NUM_ARCS];
        let r1 = multinomial(q[0], &self.routing.center1, rng);
        let r2 = multinomial(q[1], &self.routing.center2, rng);
        let r3 = multinomial(q[2], &self.routing.center3, rng);
        flows[..2].copy_from_slice(&r1);
        flows[2..5].copy_from_slice(&r2);
        flows[5..7].copy_from_slice(&r3);
        let mut discarded = 0;
        let mut survive = [0u64; NUM_ARCS];
        for arc in 0..7 {
            survive[arc] = binomial(flows[arc], 1.0 - rate(arc), rng);
            discarded += flows[arc] - survive[arc];
        }
        let second = [survive[0] + survive[2], survive[1] + survive[3] + survive[5], survive[4] + survive[6]];
        let mut delivered = 0;
        for (j, &inflow) in second.iter().enumerate() {
            let arc = 7 + j;
            let s = binomial(inflow, 1.0 - rate(arc), rng);
            discarded += inflow - s;
            delivered += s;
        }
        Replication { raw_total, delivered, discarded }
    }

    /// Averaged throughput of `batch` replications.
    pub fn batch_throughput<R: Rng + ?Sized>(&self, install: usize, theta: &[f64], rng: &mut R) -> f64 {
        let total: u64 = (0..self.batch).map(|_| self.replicate_unchecked(install, theta, rng).delivered).sum();
        total as f64 / self.batch as f64
    }
}
