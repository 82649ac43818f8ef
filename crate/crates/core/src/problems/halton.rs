//! Halton low-discrepancy points.

const PRIMES: [u64; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Points 1..=n of the Halton sequence in the unit cube, bases the first `dim` primes.
pub fn halton_unit(dim: usize, n: usize) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "at most {} dimensions supported", PRIMES.len());
    (1..=n as u64).map(|i| PRIMES[..dim].iter().map(|&b| radical_inverse(i, b)).collect()).collect()
}

/// Halton points mapped affinely into the box `[lower, upper]`.
pub fn halton_design(lower: &[f64], upper: &[f64], n: usize) -> Vec<Vec<f64>> {
    halton_unit(lower.len(), n)
        .into_iter()
        .map(|u| u.iter().enumerate().map(|(d, x)| lower[d] + x * (upper[d] - lower[d])).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_base_two_coordinates() {
        let p = halton_unit(10, 3);
        assert_eq!([p[0][0], p[1][0], p[2][0]], [0.5, 0.25, 0.75]);
        assert!((p[0][1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mapped_points_stay_in_box() {
        let pts = halton_design(&[0.1; 10], &[0.3; 10], 10_000);
        assert!(pts.iter().flatten().all(|&x| (0.1..=0.3).contains(&x)));
    }

    fn max_cdf_gap(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn more_uniform_than_pseudo_random() {
        let h = halton_unit(10, 1024);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let better = (0..10)
            .filter(|&d| {
                let hd = max_cdf_gap(h.iter().map(|p| p[d]).collect());
                let rd = max_cdf_gap((0..1024).map(|_| rng.random::<f64>()).collect());
                hd < rd
            })
            .count();
        assert!(better >= 8, "{better}");
    }
}
