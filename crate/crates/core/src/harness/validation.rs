//! Randomized property checks of the allocation program, the KRR
//! predictors and the R&S subroutine. Each check returns the worst value it
//! observed so callers can hold it to their own tolerance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::allocation::{solve_maxmin_lp, AllocationInstance};
use crate::error::Result;
use crate::krr::{symmetric_pinv, AnchorData, DiscreteKrr, MapReplication, NystromKrr, SeKernel};
use crate::rates::{pairwise_rate, GaussianArm};
use crate::rns_allocator::{DeficitGreedy, PointAllocatorState, RnsSubroutine};

/// Random program with B ≤ `max_points`, L ≤ `max_sources`; point 0 has zero
/// KL and is favorable, every other point has strictly positive KL.
pub fn random_instance(rng: &mut ChaCha8Rng, max_points: usize, max_sources: usize, epsilon: f64) -> Result<AllocationInstance> {
    let b = rng.random_range(1..=max_points);
    let l = rng.random_range(1..=max_sources);
    let mut kl: Vec<Vec<f64>> = (0..b).map(|_| (0..l).map(|_| rng.random_range(0.01..2.0)).collect()).collect();
    kl[0] = vec![0.0; l];
    let favorable: Vec<bool> = (0..b).map(|i| i == 0 || rng.random_bool(0.4)).collect();
    let g: Vec<f64> = (0..b).map(|_| rng.random_range(0.01..1.0)).collect();
    AllocationInstance::new(kl, g, favorable, epsilon)
}

/// Relative loss 1 − V(ε)/V(0) against its bound ε(B+L).
#[derive(Clone, Copy, Debug)]
pub struct FloorLoss {
    /// Largest (1 − V(ε)/V(0)) − ε(B+L).
    pub max_excess: f64,
    /// Smallest 1 − V(ε)/V(0).
    pub min_loss: f64,
}

pub fn floor_loss(cases: usize, seed: u64) -> Result<FloorLoss> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FloorLoss { max_excess: f64::NEG_INFINITY, min_loss: f64::INFINITY };
    for _ in 0..cases {
        let base = random_instance(&mut rng, 50, 5, 0.0)?;
        let bl = (base.num_points() + base.num_sources()) as f64;
        let eps = rng.random_range(0.0..1.0) / bl;
        let v0 = solve_maxmin_lp(&base)?.objective;
        let floored = AllocationInstance::new(base.kl.clone(), base.g_star.clone(), base.favorable.clone(), eps)?;
        let ve = solve_maxmin_lp(&floored)?.objective;
        let loss = 1.0 - ve / v0;
        out.max_excess = out.max_excess.max(loss - eps * bl);
        out.min_loss = out.min_loss.min(loss);
    }
    Ok(out)
}

/// Unfloored allocations on masked and zero-KL favorable points.
#[derive(Clone, Copy, Debug)]
pub struct MaskedAlpha {
    /// Largest α on a point outside the favorable set.
    pub max_masked: f64,
    /// Smallest α on the zero-KL favorable point.
    pub min_center: f64,
}

pub fn masked_alpha(cases: usize, seed: u64) -> Result<MaskedAlpha> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MaskedAlpha { max_masked: 0.0, min_center: f64::INFINITY };
    for _ in 0..cases {
        let inst = random_instance(&mut rng, 50, 5, 0.0)?;
        let sol = solve_maxmin_lp(&inst)?;
        for (b, a) in sol.alpha.iter().enumerate() {
            if !inst.favorable[b] {
                out.max_masked = out.max_masked.max(*a);
            }
        }
        out.min_center = out.min_center.min(sol.alpha[0]);
    }
    Ok(out)
}

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect()
}

/// Largest gap between rank-1 updated and refitted discrete KRR predictions.
pub fn discrete_recursion_gap(sequences: usize, steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..sequences {
        let b = rng.random_range(2..=12);
        let pts = random_points(b, &mut rng);
        let var: Vec<f64> = (0..b).map(|_| rng.random_range(0.3..3.0)).collect();
        let kernel = SeKernel::new(vec![rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)], rng.random_range(0.5..4.0))?;
        let gram = kernel.gram(&pts);
        let gamma = rng.random_range(-1.0..1.0);
        let kappa = rng.random_range(0.2..2.0);
        let mut sums: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut n = vec![1u64; b];
        let means = |s: &[f64], n: &[u64]| s.iter().zip(n).map(|(a, c)| a / *c as f64).collect::<Vec<_>>();
        let mut f = DiscreteKrr::fit(&gram, &means(&sums, &n), &n, &var, gamma, kappa)?;
        for _ in 0..steps {
            let j = rng.random_range(0..b);
            let y = rng.random_range(-3.0..3.0);
            f.update(j, y, var[j]);
            sums[j] += y;
            n[j] += 1;
        }
        let refit = DiscreteKrr::fit(&gram, &means(&sums, &n), &n, &var, gamma, kappa)?;
        for (a, r) in f.predictions().iter().zip(refit.predictions()) {
            worst = worst.max((a - r).abs());
        }
    }
    Ok(worst)
}

/// Raw data behind a Nyström model.
#[derive(Clone, Debug)]
pub struct NystromData {
    pub kernel: SeKernel,
    pub gamma: f64,
    pub kappa: f64,
    pub theta_plus: Vec<Vec<f64>>,
    pub map: Vec<f64>,
    pub anchors: Vec<AnchorData>,
    pub reps: Vec<MapReplication>,
}

impl NystromData {
    /// Design points, weights and centred responses of the least-squares term.
    fn design(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut w = Vec::new();
        let mut y = Vec::new();
        for (p, d) in self.theta_plus.iter().zip(&self.anchors) {
            if d.count > 0 {
                pts.push(p.clone());
                w.push(d.count as f64 / d.variance);
                y.push(d.mean - self.gamma);
            }
        }
        for r in &self.reps {
            pts.push(r.point.clone());
            w.push(1.0 / r.variance);
            y.push(r.y - self.gamma);
        }
        (pts, w, y)
    }

    fn basis(&self) -> Vec<Vec<f64>> {
        let mut a = self.theta_plus.clone();
        a.push(self.map.clone());
        a
    }

    /// A = K̃WK̃ᵀ + κK̄, b = K̃W(y − γ) and K̄ over Θ⁺ ∪ {θ̂}.
    pub fn system(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let basis = self.basis();
        let (pts, w, y) = self.design();
        let kt = self.kernel.cross(&basis, &pts);
        let kbar = self.kernel.gram(&basis);
        let wm = DMatrix::from_diagonal(&DVector::from_vec(w));
        let a = &kt * &wm * kt.transpose() + &kbar * self.kappa;
        let rhs = &kt * &wm * DVector::from_vec(y);
        (a, rhs, kbar)
    }

    /// Closed-form predictions on Θ⁺ ∪ {θ̂} by an SVD pseudo-inverse.
    pub fn closed_form(&self) -> Vec<f64> {
        let (a, rhs, kbar) = self.system();
        let c = symmetric_pinv(&a) * rhs;
        (kbar * c).add_scalar(self.gamma).iter().copied().collect()
    }

    /// Predictions from plain gradient descent on the penalized least-squares
    /// objective over the coefficients of the anchor kernel sections.
    pub fn gradient_descent(&self, max_iter: usize) -> Vec<f64> {
        let basis = self.basis();
        let (pts, w, y) = self.design();
        let kt = self.kernel.cross(&basis, &pts);
        let kbar = self.kernel.gram(&basis);
        let wv = DVector::from_vec(w);
        let yv = DVector::from_vec(y);
        let wk = DMatrix::from_diagonal(&wv);
        let h = &kt * &wk * kt.transpose() + &kbar * self.kappa;
        let step = 1.0 / h.symmetric_eigenvalues().max();
        let mut c = DVector::zeros(basis.len());
        for _ in 0..max_iter {
            let resid = &yv - kt.transpose() * &c;
            let grad = -(&kt * resid.component_mul(&wv)) + &kbar * &c * self.kappa;
            if grad.amax() < 1e-15 {
                break;
            }
            c -= grad * step;
        }
        (kbar * c).add_scalar(self.gamma).iter().copied().collect()
    }

    pub fn fit(&self) -> Result<NystromKrr> {
        NystromKrr::fit(
            self.kernel.clone(),
            self.gamma,
            self.kappa,
            &self.theta_plus,
            &self.map,
            &self.anchors,
            &self.reps,
            &[1.0, 1.0],
        )
    }
}

fn random_nystrom(rng: &mut ChaCha8Rng, b: usize, lengthscale: f64) -> Result<NystromData> {
    let theta_plus = random_points(b, rng);
    let anchors = (0..b)
        .map(|_| AnchorData {
            count: rng.random_range(0..4),
            mean: rng.random_range(-2.0..2.0),
            variance: rng.random_range(0.5..2.0),
        })
        .collect();
    let map = random_points(1, rng).remove(0);
    let past = random_points(2, rng);
    let reps = (0..rng.random_range(0..6))
        .map(|j| MapReplication {
            point: if j % 3 == 0 { map.clone() } else { past[j % 2].clone() },
            y: rng.random_range(-3.0..3.0),
            variance: rng.random_range(0.5..2.0),
        })
        .collect();
    Ok(NystromData {
        kernel: SeKernel::new(vec![lengthscale, lengthscale], rng.random_range(0.5..3.0))?,
        gamma: rng.random_range(-1.0..1.0),
        kappa: rng.random_range(0.5..2.0),
        theta_plus,
        map,
        anchors,
        reps,
    })
}

/// Largest gap between the incrementally updated Nyström predictions and the
/// closed form recomputed from the raw data after every step.
pub fn nystrom_update_gap(sequences: usize, steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..sequences {
        let b = rng.random_range(3..=15);
        let mut data = random_nystrom(&mut rng, b, 0.4)?;
        let mut krr = data.fit()?;
        krr.set_batch_limit(usize::MAX);
        for _ in 0..steps {
            match rng.random_range(0..4) {
                0 => {
                    let j = rng.random_range(0..b);
                    let d = &mut data.anchors[j];
                    let y = rng.random_range(-3.0..3.0);
                    d.mean = (d.mean * d.count as f64 + y) / (d.count + 1) as f64;
                    d.count += 1;
                    if rng.random_bool(0.3) {
                        d.variance = rng.random_range(0.5..2.0);
                    }
                    krr.set_anchor(j, *d);
                }
                1 | 2 => {
                    let y = rng.random_range(-3.0..3.0);
                    let variance = rng.random_range(0.5..2.0);
                    krr.add_map_observation(y, variance);
                    data.reps.push(MapReplication { point: krr.map_point().to_vec(), y, variance });
                }
                _ => {
                    data.map = random_points(1, &mut rng).remove(0);
                    krr.move_map(&data.map);
                    data.map = krr.map_point().to_vec();
                }
            }
            let cf = data.closed_form();
            let gap = krr.predictions().iter().zip(&cf).map(|(a, r)| (a - r).abs()).fold(0.0, f64::max);
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}

/// Largest gap between the closed form and gradient descent on small instances.
pub fn closed_form_vs_descent(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let b = rng.random_range(2..=7);
        let data = random_nystrom(&mut rng, b, 0.3)?;
        let direct = data.closed_form();
        let gd = data.gradient_descent(2_000_000);
        let fitted = data.fit()?.predictions();
        for ((d, g), f) in direct.iter().zip(&gd).zip(&fitted) {
            worst = worst.max((d - g).abs()).max((f - g).abs());
        }
    }
    Ok(worst)
}

/// Worst balance residual and challenger-rate spread over a set of instances.
#[derive(Clone, Copy, Debug, Default)]
pub struct Balance {
    /// Largest |N_b²/λ_b² − Σ_{i≠b} N_i²/λ_i²| / (N_b²/λ_b²).
    pub max_residual: f64,
    /// Largest (max − min)/max over the challenger rates.
    pub max_rate_spread: f64,
}

impl Balance {
    fn absorb(&mut self, n: &[u64], means: &[f64], stds: &[f64]) {
        let k = n.len();
        let best = crate::rates::argmin_lowest(means);
        let t = n.iter().sum::<u64>() as f64;
        let lead = (n[best] as f64).powi(2) / stds[best].powi(2);
        let rest: f64 = (0..k).filter(|&i| i != best).map(|i| (n[i] as f64).powi(2) / stds[i].powi(2)).sum();
        self.max_residual = self.max_residual.max((lead - rest).abs() / lead);
        let arms: Vec<GaussianArm> = (0..k).map(|i| GaussianArm::new(means[i], stds[i], n[i] as f64 / t)).collect();
        let rates: Vec<f64> = (0..k).filter(|&i| i != best).map(|i| pairwise_rate(&arms[best], &arms[i])).collect();
        let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        self.max_rate_spread = self.max_rate_spread.max((hi - lo) / hi);
    }
}

/// Balance of the subroutine's final counts, measured against the plug-in
/// estimates it last saw and against the true parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct BalanceStats {
    pub plug_in: Balance,
    pub truth: Balance,
}

/// Run the subroutine on `cases` random Gaussian instances with k ≤ 6 until
/// `total` replications, feeding it running sample means and deviations.
pub fn subroutine_balance(cases: usize, total: u64, seed: u64) -> Result<BalanceStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BalanceStats::default();
    let sub = DeficitGreedy;
    for _ in 0..cases {
        let k = rng.random_range(2..=6);
        let means: Vec<f64> = (0..k).map(|i| if i == 0 { 0.0 } else { rng.random_range(0.5..2.0) }).collect();
        let stds: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let noise: Vec<Normal<f64>> = (0..k).map(|i| Normal::new(means[i], stds[i]).expect("positive std")).collect();
        let mut sum = vec![0.0; k];
        let mut sq = vec![0.0; k];
        let mut n = vec![0u64; k];
        let draw = |i: usize, rng: &mut ChaCha8Rng, sum: &mut [f64], sq: &mut [f64], n: &mut [u64]| {
            let y = noise[i].sample(rng);
            sum[i] += y;
            sq[i] += y * y;
            n[i] += 1;
        };
        for i in 0..k {
            for _ in 0..10 {
                draw(i, &mut rng, &mut sum, &mut sq, &mut n);
            }
        }
        let estimates = |sum: &[f64], sq: &[f64], n: &[u64]| {
            let m: Vec<f64> = (0..k).map(|i| sum[i] / n[i] as f64).collect();
            let s: Vec<f64> = (0..k)
                .map(|i| ((sq[i] - n[i] as f64 * m[i] * m[i]) / (n[i] - 1) as f64).max(1e-12).sqrt())
                .collect();
            (m, s)
        };
        let mut seen = estimates(&sum, &sq, &n);
        while n.iter().sum::<u64>() < total {
            seen = estimates(&sum, &sq, &n);
            let batch = (total - n.iter().sum::<u64>()).min(100);
            let alloc = sub.allocate_batch(&PointAllocatorState::new(n.clone(), seen.0.clone(), seen.1.clone()), batch);
            for (i, &a) in alloc.iter().enumerate() {
                for _ in 0..a {
                    draw(i, &mut rng, &mut sum, &mut sq, &mut n);
                }
            }
        }
        out.plug_in.absorb(&n, &seen.0, &seen.1);
        out.truth.absorb(&n, &means, &stds);
    }
    Ok(out)
}

/// Result line of one check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub observed: f64,
    pub bound: f64,
    /// `bound` is an upper limit when set, a lower limit otherwise.
    pub upper: bool,
}

impl CheckOutcome {
    fn at_most(name: &'static str, observed: f64, bound: f64) -> Self {
        Self { name, observed, bound, upper: true }
    }

    fn at_least(name: &'static str, observed: f64, bound: f64) -> Self {
        Self { name, observed, bound, upper: false }
    }

    pub fn passed(&self) -> bool {
        if self.upper {
            self.observed <= self.bound
        } else {
            self.observed >= self.bound
        }
    }
}

/// The full property suite with its default sizes and limits.
pub fn default_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let fl = floor_loss(500, seed)?;
    let ma = masked_alpha(500, seed.wrapping_add(1))?;
    let bal = subroutine_balance(20, 100_000, seed.wrapping_add(5))?;
    Ok(vec![
        CheckOutcome::at_most("floor loss minus eps(B+L)", fl.max_excess, 1e-9),
        CheckOutcome::at_least("floor loss", fl.min_loss, -1e-9),
        CheckOutcome::at_most("alpha on masked points at eps = 0", ma.max_masked, 1e-10),
        CheckOutcome::at_least("alpha on the zero-KL favorable point", ma.min_center, 1e-12),
        CheckOutcome::at_most("discrete KRR recursion vs refit", discrete_recursion_gap(200, 50, seed.wrapping_add(2))?, 1e-8),
        CheckOutcome::at_most("Nystrom updates vs closed form", nystrom_update_gap(50, 50, seed.wrapping_add(3))?, 1e-6),
        CheckOutcome::at_most("Nystrom closed form vs gradient descent", closed_form_vs_descent(20, seed.wrapping_add(4))?, 1e-5),
        CheckOutcome::at_most("variance balance residual", bal.plug_in.max_residual, 0.01),
        CheckOutcome::at_most("challenger rate spread", bal.plug_in.max_rate_spread, 0.05),
    ])
}
