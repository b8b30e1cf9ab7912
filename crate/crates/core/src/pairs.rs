//! Linear indexing of unordered pairs `i < j` in row-major order.

use rand::Rng;

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

fn row_start(n: usize, i: usize) -> usize {
    i * (2 * n - i - 1) / 2
}

/// Maps `t` in `0..pair_count(n)` to the `t`-th pair `(i, j)`, `i < j`.
pub fn unrank(n: usize, t: usize) -> (usize, usize) {
    debug_assert!(t < pair_count(n));
    let m = (2 * n - 1) as f64;
    let mut i = ((m - (m * m - 8.0 * t as f64).max(0.0).sqrt()) / 2.0).floor() as usize;
    i = i.min(n - 2);
    while i > 0 && row_start(n, i) > t {
        i -= 1;
    }
    while i + 1 < n - 1 && row_start(n, i + 1) <= t {
        i += 1;
    }
    (i, t - row_start(n, i) + i + 1)
}

/// `amount` distinct pairs drawn uniformly without replacement, or every pair
/// in order when `amount` covers them all.
pub fn sample_pairs<R: Rng + ?Sized>(rng: &mut R, n: usize, amount: usize) -> Vec<(usize, usize)> {
    let total = pair_count(n);
    if amount >= total {
        return all_pairs(n);
    }
    rand::seq::index::sample(rng, total, amount)
        .into_iter()
        .map(|t| unrank(n, t))
        .collect()
}

pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn unrank_matches_enumeration() {
        for n in 2..40 {
            for (t, p) in all_pairs(n).into_iter().enumerate() {
                assert_eq!(unrank(n, t), p, "n={n} t={t}");
            }
        }
        let n = 20_000;
        assert_eq!(unrank(n, pair_count(n) - 1), (n - 2, n - 1));
        assert_eq!(unrank(n, n - 1), (1, 2));
    }

    #[test]
    fn sampled_pairs_are_distinct() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut p = sample_pairs(&mut rng, 50, 500);
        assert_eq!(p.len(), 500);
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 500);
        assert!(p.iter().all(|&(i, j)| i < j && j < 50));
        assert_eq!(sample_pairs(&mut rng, 4, 100), all_pairs(4));
    }
}
