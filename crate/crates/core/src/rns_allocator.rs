//! Fixed-budget R&S subroutine that splits one support point's simulation
//! batch among the k solutions.

use crate::rates::{argmin_lowest, optimal_point_rate};

/// Per-point sampling state seen by the subroutine.
#[derive(Clone, Debug, PartialEq)]
pub struct PointAllocatorState {
    pub counts: Vec<u64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl PointAllocatorState {
    pub fn new(counts: Vec<u64>, means: Vec<f64>, stds: Vec<f64>) -> Self {
        Self { counts, means, stds }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// A classical R&S allocator that can be slotted into the sequential algorithms.
pub trait RnsSubroutine: Send + Sync {
    /// Split `batch` replications among the arms; the result sums to `batch`.
    fn allocate_batch(&self, state: &PointAllocatorState, batch: u64) -> Vec<u64>;
}

/// Tracks the plug-in optimal static fractions by assigning each replication
/// to the arm furthest below its target share. Arms with fewer than
/// ln²(ΣN) replications are served first so none is starved.
#[derive(Clone, Copy, Debug, Default)]
pub struct DeficitGreedy;

impl DeficitGreedy {
    /// Target fractions from the plug-in means, or `None` when the plug-in best is tied.
    pub fn target(state: &PointAllocatorState) -> Option<Vec<f64>> {
        let k = state.means.len();
        if k == 1 {
            return Some(vec![1.0]);
        }
        let best = argmin_lowest(&state.means);
        optimal_point_rate(&state.means, &state.stds, best).ok().map(|r| r.fractions)
    }
}

impl RnsSubroutine for DeficitGreedy {
    fn allocate_batch(&self, state: &PointAllocatorState, batch: u64) -> Vec<u64> {
        let k = state.counts.len();
        let mut out = vec![0u64; k];
        if batch == 0 || k == 0 {
            return out;
        }
        let mut n: Vec<u64> = state.counts.clone();
        let mut total: u64 = n.iter().sum();

        let Some(target) = Self::target(state) else {
            // Tied plug-in best: even split, remainder to the least-sampled arms.
            let base = batch / k as u64;
            out.iter_mut().for_each(|o| *o = base);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&i| (n[i], i));
            for &i in order.iter().take((batch % k as u64) as usize) {
                out[i] += 1;
            }
            return out;
        };

        for _ in 0..batch {
            let floor = if total > 1 { (total as f64).ln().powi(2) } else { 0.0 };
            let starved = (0..k).filter(|&i| (n[i] as f64) < floor).min_by_key(|&i| (n[i], i));
            let pick = starved.unwrap_or_else(|| {
                let next = (total + 1) as f64;
                let mut best = 0;
                let mut best_deficit = f64::NEG_INFINITY;
                for i in 0..k {
                    let d = target[i] * next - n[i] as f64;
                    if d > best_deficit {
                        best_deficit = d;
                        best = i;
                    }
                }
                best
            });
            out[pick] += 1;
            n[pick] += 1;
            total += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_batch() {
        let st = PointAllocatorState::new(vec![3, 4], vec![0.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(DeficitGreedy.allocate_batch(&st, 0), vec![0, 0]);
    }

    #[test]
    fn fills_starved_arm() {
        let st = PointAllocatorState::new(vec![10, 0], vec![0.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(DeficitGreedy.allocate_batch(&st, 10), vec![0, 10]);
    }

    #[test]
    fn tied_best_splits_uniformly() {
        let st = PointAllocatorState::new(vec![5, 5, 2], vec![1.0, 1.0, 2.0], vec![1.0; 3]);
        assert_eq!(DeficitGreedy.allocate_batch(&st, 7), vec![2, 2, 3]);
    }

    /// Run the allocator with simulated Gaussian outputs until ΣN reaches `total`.
    fn long_run(means: &[f64], stds: &[f64], total: u64, seed: u64) -> PointAllocatorState {
        let k = means.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sums = vec![0.0; k];
        let mut counts = vec![0u64; k];
        let draw = |i: usize, rng: &mut ChaCha8Rng| Normal::new(means[i], stds[i]).unwrap().sample(rng);
        for i in 0..k {
            for _ in 0..2 {
                sums[i] += draw(i, &mut rng);
                counts[i] += 1;
            }
        }
        let mut st = PointAllocatorState::new(counts.clone(), vec![0.0; k], stds.to_vec());
        while st.total() < total {
            for i in 0..k {
                st.means[i] = sums[i] / st.counts[i] as f64;
            }
            let batch = 50.min(total - st.total());
            let alloc = DeficitGreedy.allocate_batch(&st, batch);
            for i in 0..k {
                for _ in 0..alloc[i] {
                    sums[i] += draw(i, &mut rng);
                }
                st.counts[i] += alloc[i];
            }
        }
        for i in 0..k {
            st.means[i] = sums[i] / st.counts[i] as f64;
        }
        st
    }

    #[test]
    fn long_run_ratios_track_optimum() {
        let means = [0.0, 1.0, 1.0];
        let stds = [1.0, 1.0, 1.0];
        let st = long_run(&means, &stds, 100_000, 1);
        let target = optimal_point_rate(&means, &stds, 0).unwrap().fractions;
        let total = st.total() as f64;
        for i in 0..3 {
            let r = st.counts[i] as f64 / total;
            assert!((r - target[i]).abs() < 0.02, "arm {i}: {r} vs {}", target[i]);
        }
        assert!(st.counts.iter().all(|&c| c >= 50));
    }

    #[test]
    fn floor_serves_far_arms() {
        // An arm with a huge gap gets a tiny target share but is still sampled.
        let st = long_run(&[0.0, 0.5, 1000.0], &[1.0; 3], 100_000, 2);
        assert!(st.counts[2] as f64 >= (1e5f64).ln().powi(2) - 1.0);
    }

    proptest! {
        #[test]
        fn counts_sum_to_batch(seed in 0u64..10_000, k in 1usize..7, batch in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let st = PointAllocatorState::new(
                (0..k).map(|_| rng.random_range(1..100)).collect(),
                (0..k).map(|_| rng.random_range(-5.0..5.0)).collect(),
                (0..k).map(|_| rng.random_range(0.5..3.0)).collect(),
            );
            let out = DeficitGreedy.allocate_batch(&st, batch);
            prop_assert_eq!(out.len(), k);
            prop_assert_eq!(out.iter().sum::<u64>(), batch);
        }
    }
}
