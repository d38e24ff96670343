//! Average K-NN distance statistic and the empirical rank score built on it.
//!
//! `G(x)` is the mean Euclidean distance from `x` to its `k` nearest
//! reference points (the point itself excluded when it belongs to the
//! reference set). The rank score of a query is the fraction of reference
//! points whose `G` is strictly larger than the query's: deep points score
//! near 1, outliers near 0.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{seeded_rng, DataMatrix};
use crate::error::{Error, Result};
use crate::scalar::{cmp, sq_dist, Scalar};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_ROUNDS: usize = 20;

/// Mean of the `k` smallest entries of `sq` after taking square roots.
/// The selected entries are summed in ascending order.
fn mean_sqrt_of_k_smallest<T: Scalar>(sq: &mut [T], k: usize) -> T {
    sq.select_nth_unstable_by(k - 1, cmp);
    let head = &mut sq[..k];
    head.sort_unstable_by(cmp);
    let mut sum = T::zero();
    for v in head.iter() {
        sum += v.sqrt();
    }
    sum / T::of_usize(k)
}

fn check_dim<T: Scalar>(query: &[T], reference: &DataMatrix<T>) -> Result<()> {
    if query.len() != reference.d() {
        return Err(Error::DimensionMismatch {
            expected: reference.d(),
            got: query.len(),
        });
    }
    Ok(())
}

/// `G(query)` against every row of `reference`.
pub fn avg_knn_distance<T: Scalar>(query: &[T], reference: &DataMatrix<T>, k: usize) -> Result<T> {
    check_dim(query, reference)?;
    if k == 0 || k > reference.n() {
        return Err(Error::InsufficientData(format!(
            "k = {k} needs between 1 and {} reference points",
            reference.n()
        )));
    }
    let mut sq: Vec<T> = reference.rows().map(|r| sq_dist(query, r)).collect();
    Ok(mean_sqrt_of_k_smallest(&mut sq, k))
}

/// `G(x_index)` against the reference with row `index` removed.
pub fn avg_knn_distance_excluding<T: Scalar>(
    reference: &DataMatrix<T>,
    index: usize,
    k: usize,
) -> Result<T> {
    if index >= reference.n() {
        return Err(Error::InvalidParameter(format!(
            "row {index} out of range for {} rows",
            reference.n()
        )));
    }
    if k == 0 || k >= reference.n() {
        return Err(Error::InsufficientData(format!(
            "k = {k} needs between 1 and {} other reference points",
            reference.n() - 1
        )));
    }
    let query = reference.row(index);
    let mut sq: Vec<T> = reference
        .rows()
        .enumerate()
        .filter(|&(j, _)| j != index)
        .map(|(_, r)| sq_dist(query, r))
        .collect();
    Ok(mean_sqrt_of_k_smallest(&mut sq, k))
}

/// `G` of every row with self-exclusion.
pub fn knn_g_values<T: Scalar>(data: &DataMatrix<T>, k: usize) -> Result<Vec<T>> {
    if k == 0 || k >= data.n() {
        return Err(Error::InsufficientData(format!(
            "k = {k} needs at least {} points, got {}",
            k + 1,
            data.n()
        )));
    }
    Ok((0..data.n())
        .into_par_iter()
        .map(|i| avg_knn_distance_excluding(data, i, k).expect("k checked above"))
        .collect())
}

/// `G` of every row of `queries` against `reference`.
pub fn knn_g_values_against<T: Scalar>(
    queries: &DataMatrix<T>,
    reference: &DataMatrix<T>,
    k: usize,
) -> Result<Vec<T>> {
    if queries.d() != reference.d() {
        return Err(Error::DimensionMismatch {
            expected: reference.d(),
            got: queries.d(),
        });
    }
    if k == 0 || k > reference.n() {
        return Err(Error::InsufficientData(format!(
            "k = {k} needs between 1 and {} reference points",
            reference.n()
        )));
    }
    Ok((0..queries.n())
        .into_par_iter()
        .map(|i| avg_knn_distance(queries.row(i), reference, k).expect("checked above"))
        .collect())
}

/// `(1/n) * |{i : query_g < reference_g[i]}|`. Ties count as not-less.
pub fn rank_score<T: Scalar>(query_g: T, reference_g: &[T]) -> T {
    let above = reference_g.iter().filter(|&&g| query_g < g).count();
    T::of_usize(above) / T::of_usize(reference_g.len())
}

/// Same count as [`rank_score`] over an ascending slice, by binary search.
pub(crate) fn rank_in_sorted<T: Scalar>(query_g: T, sorted_g: &[T]) -> T {
    let not_above = sorted_g.partition_point(|&g| g <= query_g);
    T::of_usize(sorted_g.len() - not_above) / T::of_usize(sorted_g.len())
}

fn sorted<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut s = v.to_vec();
    s.sort_unstable_by(cmp);
    s
}

/// Per-point `G` and rank scores of a nominal sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnScoreTable<T> {
    g: Vec<T>,
    r: Vec<T>,
    k: usize,
    rounds: usize,
}

impl<T: Scalar> KnnScoreTable<T> {
    /// Builds a table from precomputed values. `r` must lie in `[0, 1]`.
    pub fn from_parts(g: Vec<T>, r: Vec<T>, k: usize, rounds: usize) -> Result<Self> {
        if g.len() != r.len() || g.is_empty() {
            return Err(Error::Format("g and r must be nonempty and of equal length".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("g values must be finite".into()));
        }
        if r.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::Format("r values must lie in [0, 1]".into()));
        }
        Ok(KnnScoreTable { g, r, k, rounds })
    }

    pub fn g(&self) -> &[T] {
        &self.g
    }

    pub fn r(&self) -> &[T] {
        &self.r
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of resampling rounds; 0 for a table built on the full sample.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// Restriction to `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        KnnScoreTable {
            g: indices.iter().map(|&i| self.g[i]).collect(),
            r: indices.iter().map(|&i| self.r[i]).collect(),
            k: self.k,
            rounds: self.rounds,
        }
    }

    /// CSV with header `index,g,r`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<score table output>", e);
        writeln!(out, "index,g,r").map_err(io)?;
        for (i, (g, r)) in self.g.iter().zip(&self.r).enumerate() {
            writeln!(out, "{i},{g},{r}").map_err(io)?;
        }
        Ok(())
    }
}

/// `G` with self-exclusion over the whole sample and ranks against that same sample.
pub fn knn_score_table<T: Scalar>(data: &DataMatrix<T>, k: usize) -> Result<KnnScoreTable<T>> {
    let g = knn_g_values(data, k)?;
    let s = sorted(&g);
    let r = g.iter().map(|&gi| rank_in_sorted(gi, &s)).collect();
    Ok(KnnScoreTable {
        g,
        r,
        k,
        rounds: 0,
    })
}

/// One half of a resampling round: the points being ranked, the other half
/// used as their neighbour pool, and their `G` values against that pool.
#[derive(Debug, Clone)]
struct HalfSplit<T> {
    members: Vec<usize>,
    neighbours: DataMatrix<T>,
    g: Vec<T>,
    sorted_g: Vec<T>,
}

/// U-statistic style resampled ranks.
///
/// Each round shuffles the sample into halves `A` (the larger half when `n`
/// is odd) and `B`. Points of `A` get `G` against `B` and are ranked among
/// `A`'s values; then the roles swap. A point's final rank is the mean over
/// rounds. Queries are ranked the same way against every half and averaged.
#[derive(Debug, Clone)]
pub struct ResampledRanker<T> {
    halves: Vec<HalfSplit<T>>,
    table: KnnScoreTable<T>,
}

impl<T: Scalar> ResampledRanker<T> {
    pub fn new(data: &DataMatrix<T>, k: usize, rounds: usize, seed: u64) -> Result<Self> {
        let n = data.n();
        if rounds == 0 {
            return Err(Error::InvalidParameter("resampling needs at least one round".into()));
        }
        if k == 0 || n < 2 * k + 2 {
            return Err(Error::InsufficientData(format!(
                "resampling with k = {k} needs at least {} points, got {n}",
                2 * k + 2
            )));
        }
        let mut rng = seeded_rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut halves = Vec::with_capacity(2 * rounds);
        let mut g_sum = vec![T::zero(); n];
        let mut r_sum = vec![T::zero(); n];
        for _ in 0..rounds {
            order.shuffle(&mut rng);
            let (a, b) = order.split_at(n.div_ceil(2));
            for (members, pool) in [(a, b), (b, a)] {
                let neighbours = data.select(pool)?;
                let queries = data.select(members)?;
                let g = knn_g_values_against(&queries, &neighbours, k)?;
                let sorted_g = sorted(&g);
                for (&i, &gi) in members.iter().zip(&g) {
                    g_sum[i] += gi;
                    r_sum[i] += rank_in_sorted(gi, &sorted_g);
                }
                halves.push(HalfSplit {
                    members: members.to_vec(),
                    neighbours,
                    g,
                    sorted_g,
                });
            }
        }
        let denom = T::of_usize(rounds);
        let table = KnnScoreTable {
            g: g_sum.into_iter().map(|v| v / denom).collect(),
            r: r_sum.into_iter().map(|v| (v / denom).min(T::one())).collect(),
            k,
            rounds,
        };
        Ok(ResampledRanker { halves, table })
    }

    pub fn table(&self) -> &KnnScoreTable<T> {
        &self.table
    }

    pub fn into_table(self) -> KnnScoreTable<T> {
        self.table
    }

    /// Rank score of a new point, averaged over every half of every round.
    pub fn rank(&self, query: &[T]) -> Result<T> {
        let mut sum = T::zero();
        for h in &self.halves {
            let g = avg_knn_distance(query, &h.neighbours, self.table.k)?;
            sum += rank_in_sorted(g, &h.sorted_g);
        }
        Ok(sum / T::of_usize(self.halves.len()))
    }

    /// Per-round `(members, g)` pairs, for inspection.
    pub fn rounds(&self) -> impl Iterator<Item = (&[usize], &[T])> + '_ {
        self.halves.iter().map(|h| (h.members.as_slice(), h.g.as_slice()))
    }
}

/// Resampled rank table of a nominal sample.
pub fn resampled_ranks<T: Scalar>(
    data: &DataMatrix<T>,
    k: usize,
    rounds: usize,
    seed: u64,
) -> Result<KnnScoreTable<T>> {
    ResampledRanker::new(data, k, rounds, seed).map(ResampledRanker::into_table)
}
