//! Adaptive point sampling: oversample regions with the largest cached
//! mapping error, refresh the rest uniformly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::sample_without_replacement;

/// Cached pointwise losses from the previous epoch, as (cloud index, loss)
/// pairs aligned to the previous sample.
pub type LossEntries = [(usize, f64)];

/// Draw `m` cloud indices: the `floor(a * m)` entries of `cache` with the
/// highest losses are retained (ties by lowest index), the remaining
/// `ceil((1 - a) * m)` are drawn uniformly without replacement from the rest
/// of the cloud. An empty cache (first epoch) or `a = 0` degrades to plain
/// uniform sampling.
pub fn adaptive_sample(
    cloud_size: usize,
    cache: &LossEntries,
    m: usize,
    a: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if m > cloud_size {
        return Err(Error::invalid(format!(
            "cannot sample {m} points from a cloud of {cloud_size}"
        )));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid("adaptive fraction must lie in [0, 1]"));
    }
    let retain_target = (a * m as f64).floor() as usize;
    let retain = retain_target.min(cache.len()).min(m);

    let mut retained: Vec<usize> = if retain > 0 {
        let mut sorted: Vec<(usize, f64)> = cache.to_vec();
        sorted.sort_by(|(ia, la), (ib, lb)| {
            lb.partial_cmp(la)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        });
        sorted.truncate(retain);
        sorted.into_iter().map(|(i, _)| i).collect()
    } else {
        Vec::new()
    };

    let fresh = m - retained.len();
    if fresh > 0 {
        let mut excluded = vec![false; cloud_size];
        for &i in &retained {
            excluded[i] = true;
        }
        let available: Vec<usize> = (0..cloud_size).filter(|&i| !excluded[i]).collect();
        let picks = sample_without_replacement(available.len(), fresh, rng)?;
        retained.extend(picks.into_iter().map(|p| available[p]));
    }
    Ok(retained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_fraction_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cache = vec![(0, 9.0), (1, 8.0)];
        let idx = adaptive_sample(50, &cache, 10, 0.0, &mut rng).unwrap();
        assert_eq!(idx.len(), 10);
        let mut sorted = idx.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn retains_top_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cache = vec![(0, 3.0), (1, 1.0), (2, 2.0), (3, 5.0)];
        let idx = adaptive_sample(4, &cache, 2, 1.0, &mut rng).unwrap();
        assert_eq!(idx, vec![3, 0]);
    }

    #[test]
    fn paper_split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cache: Vec<(usize, f64)> = (0..2000).map(|i| (i, i as f64)).collect();
        let idx = adaptive_sample(10_000, &cache, 2000, 0.15, &mut rng).unwrap();
        assert_eq!(idx.len(), 2000);
        // the 300 highest-loss entries are exactly the retained prefix
        let retained: Vec<usize> = idx[..300].to_vec();
        let expect: Vec<usize> = (0..2000).rev().take(300).collect();
        assert_eq!(retained, expect);
        let mut all = idx.clone();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 2000);
    }

    #[test]
    fn retention_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..200 {
            let cloud = 30 + (case % 50);
            let cache_len = 5 + (case % 20);
            let cache: Vec<(usize, f64)> = (0..cache_len)
                .map(|i| (i, rand::Rng::gen::<f64>(&mut rng)))
                .collect();
            let m = cache_len.min(cloud);
            let a = 0.4;
            let idx = adaptive_sample(cloud, &cache, m, a, &mut rng).unwrap();
            let k = ((a * m as f64).floor() as usize).min(cache.len());
            let mut oracle: Vec<(usize, f64)> = cache.clone();
            oracle.sort_by(|(ia, la), (ib, lb)| {
                lb.partial_cmp(la).unwrap().then(ia.cmp(ib))
            });
            let expect: Vec<usize> = oracle[..k].iter().map(|(i, _)| *i).collect();
            assert_eq!(&idx[..k], &expect[..]);
        }
    }

    #[test]
    fn oversized_request_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(adaptive_sample(5, &[], 6, 0.0, &mut rng).is_err());
    }
}
