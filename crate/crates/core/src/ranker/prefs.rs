use std::collections::HashSet;

use rand::seq::index;

use crate::dataset::seeded_rng;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform bins over `[0, 1]`: `level = 1 + floor(r * m)`, with `r = 1` mapped to `m`.
pub fn quantize<T: Scalar>(r: &[T], m: usize) -> Result<Vec<usize>> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "quantization needs m >= 2 levels, got {m}"
        )));
    }
    let mf = T::of_usize(m);
    r.iter()
        .map(|&v| {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::InvalidParameter(format!(
                    "rank score {v} outside [0, 1]"
                )));
            }
            let bin = (v * mf).floor().to_usize().unwrap_or(m);
            Ok((1 + bin).min(m))
        })
        .collect()
}

/// Ordered index pairs `(i, j)` asserting that item `i` ranks above item `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceSet {
    pairs: Vec<(usize, usize)>,
    levels: Vec<usize>,
    complete: bool,
}

fn cross_level_count(levels: &[usize]) -> usize {
    let top = levels.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; top + 1];
    for &l in levels {
        counts[l] += 1;
    }
    let mut below = 0;
    let mut total = 0;
    for c in counts {
        total += c * below;
        below += c;
    }
    total
}

impl PreferenceSet {
    /// Validates an explicit pair list against `levels`.
    pub fn from_pairs(levels: Vec<usize>, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let n = levels.len();
        let mut seen = HashSet::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "pair ({i}, {j}) out of range for {n} items"
                )));
            }
            if levels[i] <= levels[j] {
                return Err(Error::InvalidParameter(format!(
                    "pair ({i}, {j}) does not go from a higher to a lower level"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidParameter(format!("duplicate pair ({i}, {j})")));
            }
        }
        let complete = pairs.len() == cross_level_count(&levels);
        Ok(PreferenceSet {
            pairs,
            levels,
            complete,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// True when every cross-level pair is present, which lets the solver
    /// evaluate the loss level block by level block.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Item indices grouped by level, lowest level first; empty levels skipped.
    pub(crate) fn level_groups(&self) -> Vec<Vec<usize>> {
        let top = self.levels.iter().copied().max().unwrap_or(0);
        let mut groups = vec![Vec::new(); top + 1];
        for (i, &l) in self.levels.iter().enumerate() {
            groups[l].push(i);
        }
        groups.retain(|g| !g.is_empty());
        groups
    }
}

/// Every pair of items on different levels, higher level first.
///
/// With `max_pairs` set and exceeded, a seeded uniform subsample of exactly
/// `max_pairs` pairs is kept (in enumeration order).
pub fn make_pairs(levels: &[usize], max_pairs: Option<usize>, seed: u64) -> PreferenceSet {
    let n = levels.len();
    let total = cross_level_count(levels);
    let mut pairs = Vec::with_capacity(total.min(max_pairs.unwrap_or(usize::MAX)));
    let keep: Option<Vec<usize>> = match max_pairs {
        Some(cap) if cap < total => {
            let mut picked = index::sample(&mut seeded_rng(seed), total, cap).into_vec();
            picked.sort_unstable();
            Some(picked)
        }
        _ => None,
    };
    let mut ordinal = 0;
    let mut next = 0;
    for i in 0..n {
        for j in 0..n {
            if levels[i] > levels[j] {
                match &keep {
                    None => pairs.push((i, j)),
                    Some(k) => {
                        if next < k.len() && k[next] == ordinal {
                            pairs.push((i, j));
                            next += 1;
                        }
                    }
                }
                ordinal += 1;
            }
        }
    }
    let complete = keep.is_none();
    PreferenceSet {
        pairs,
        levels: levels.to_vec(),
        complete,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_bins() {
        assert_eq!(quantize(&[0.1, 0.5, 0.9], 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(quantize(&[1.0], 3).unwrap(), vec![3]);
        assert_eq!(quantize(&[0.32, 0.34], 3).unwrap(), vec![1, 2]);
        assert_eq!(quantize(&[0.0, 1.0], 2).unwrap(), vec![1, 2]);
        assert!(quantize(&[0.5], 1).is_err());
        assert!(quantize(&[1.5], 3).is_err());
    }

    #[test]
    fn pairs_by_hand() {
        let p = make_pairs(&[1, 2, 3], None, 0);
        let mut got = p.pairs().to_vec();
        got.sort();
        assert_eq!(got, vec![(1, 0), (2, 0), (2, 1)]);
        assert!(p.is_complete());
        assert!(make_pairs(&[2, 2, 2], None, 0).is_empty());
        let levels: Vec<usize> = (0..30).map(|i| 1 + i / 10).collect();
        assert_eq!(make_pairs(&levels, None, 0).len(), 300);
    }

    #[test]
    fn capped_pairs_are_exact_subsample() {
        let levels: Vec<usize> = (0..30).map(|i| 1 + i % 3).collect();
        let p = make_pairs(&levels, Some(50), 3);
        assert_eq!(p.len(), 50);
        assert!(!p.is_complete());
        assert_eq!(p, make_pairs(&levels, Some(50), 3));
        let full = make_pairs(&levels, None, 0);
        assert!(p.pairs().iter().all(|q| full.pairs().contains(q)));
    }

    #[test]
    fn explicit_pairs_validated() {
        assert!(PreferenceSet::from_pairs(vec![1, 2], vec![(0, 1)]).is_err());
        assert!(PreferenceSet::from_pairs(vec![1, 2], vec![(1, 0), (1, 0)]).is_err());
        assert!(PreferenceSet::from_pairs(vec![1, 2], vec![(1, 5)]).is_err());
        let p = PreferenceSet::from_pairs(vec![1, 2], vec![(1, 0)]).unwrap();
        assert!(p.is_complete());
        let p = PreferenceSet::from_pairs(vec![1, 2, 3], vec![(1, 0)]).unwrap();
        assert!(!p.is_complete());
    }

    proptest! {
        #[test]
        fn pair_invariants(levels in prop::collection::vec(1usize..=5, 0..40)) {
            let p = make_pairs(&levels, None, 0);
            let mut counts = [0usize; 6];
            for &l in &levels { counts[l] += 1; }
            let mut expect = 0;
            for a in 1..=5 { for b in 1..a { expect += counts[a] * counts[b]; } }
            prop_assert_eq!(p.len(), expect);
            let mut seen = HashSet::new();
            for &(i, j) in p.pairs() {
                prop_assert!(levels[i] > levels[j]);
                prop_assert!(i != j);
                prop_assert!(seen.insert((i, j)));
            }
        }
    }
}
