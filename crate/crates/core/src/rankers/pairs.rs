//! Preference pairs for the pairwise ranker.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Pairs `(hi, lo)` with `labels[hi] > labels[lo] + margin`.
///
/// `labels` must be sorted ascending, which makes the pair set a function of
/// the multiset of rows rather than their order. When more than `cap` pairs
/// exist, `cap` of them are drawn uniformly without replacement. Output is
/// sorted by `(hi, lo)`.
pub fn preference_pairs(
    labels: &[f64],
    margin: f64,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    debug_assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    // below[a] = number of rows ranked strictly below row a
    let below: Vec<usize> = labels
        .iter()
        .map(|&ya| labels.partition_point(|&yb| ya > yb + margin))
        .collect();
    let mut offsets = Vec::with_capacity(labels.len() + 1);
    offsets.push(0usize);
    for b in &below {
        offsets.push(offsets.last().unwrap() + b);
    }
    let total = *offsets.last().unwrap();
    if total == 0 {
        return Err(Error::DegenerateTraining(format!(
            "no preference pairs with label gap above {margin}"
        )));
    }
    let pick = |k: usize| {
        // last a with offsets[a] <= k
        let a = offsets.partition_point(|&o| o <= k) - 1;
        (a, k - offsets[a])
    };
    if total <= cap {
        return Ok((0..total).map(pick).collect());
    }
    let mut chosen = index::sample(rng, total, cap).into_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(pick).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn enumerates_all_pairs_under_cap() {
        let labels = [0.0, 0.05, 0.5, 0.9];
        let pairs = preference_pairs(&labels, 0.1, 100, &mut rng()).unwrap();
        let mut brute = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                if labels[a] > labels[b] + 0.1 {
                    brute.push((a, b));
                }
            }
        }
        assert_eq!(pairs, brute);
    }

    #[test]
    fn cap_limits_and_samples_valid_pairs() {
        let labels: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let pairs = preference_pairs(&labels, 0.1, 50, &mut rng()).unwrap();
        assert_eq!(pairs.len(), 50);
        assert!(pairs.iter().all(|&(a, b)| labels[a] > labels[b] + 0.1));
        assert_eq!(pairs, preference_pairs(&labels, 0.1, 50, &mut rng()).unwrap());
    }

    #[test]
    fn equal_labels_give_no_pairs() {
        assert!(preference_pairs(&[0.5, 0.5], 0.1, 10, &mut rng()).is_err());
    }
}
