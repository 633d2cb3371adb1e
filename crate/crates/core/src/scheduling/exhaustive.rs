use rand::Rng;
use rayon::prelude::*;

use super::{optimize_subset, Decision, SlotProblem};
use crate::channel::RisConfig;
use crate::error::{Error, Result};

/// Largest number of subsets the exhaustive search agrees to evaluate.
pub const SUBSET_GUARD: u128 = 100_000;

/// `sum_{m=1..min(M,K)} C(K, m)`.
pub fn subset_count(users: usize, antennas: usize) -> u128 {
    let mut total = 0u128;
    let mut binom = 1u128;
    for m in 1..=antennas.min(users) {
        binom = binom * (users - m + 1) as u128 / m as u128;
        total += binom;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveOutcome {
    pub decision: Decision,
    pub subsets_evaluated: usize,
    /// Best objective of every subset, in enumeration order.
    pub subset_objectives: Vec<(Vec<usize>, f64)>,
}

/// All non-empty subsets of `0..users` with at most `max_len` members, by size then
/// lexicographically.
pub(crate) fn enumerate_subsets(users: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=max_len.min(users) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let Some(i) = (0..size).rev().find(|&i| idx[i] < users - size + i) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// Runs [`optimize_subset`] on every user set from several phase starts and returns
/// the best. The first start is drawn from `rng` exactly as the greedy scheduler
/// draws its start; the remaining ones follow. Ties go to the earlier subset.
pub fn exhaustive_schedule<R: Rng + ?Sized>(problem: &SlotProblem<'_>, rng: &mut R) -> Result<ExhaustiveOutcome> {
    let count = subset_count(problem.users(), problem.antennas());
    if count > SUBSET_GUARD {
        return Err(Error::SearchTooLarge {
            count,
            limit: SUBSET_GUARD,
        });
    }
    let n = problem.links.elements();
    let starts: Vec<RisConfig> = (0..problem.settings.exhaustive_starts.max(1))
        .map(|_| RisConfig::random(n, rng))
        .collect();
    let subsets = enumerate_subsets(problem.users(), problem.antennas());

    let results: Vec<Result<Decision>> = subsets
        .par_iter()
        .map(|users| {
            let mut best: Option<Decision> = None;
            for start in &starts {
                let d = optimize_subset(problem, users, start)?;
                if best.as_ref().is_none_or(|b| d.objective > b.objective) {
                    best = Some(d);
                }
            }
            Ok(best.expect("at least one start"))
        })
        .collect();

    let mut subset_objectives = Vec::with_capacity(subsets.len());
    let mut best: Option<Decision> = None;
    for (users, r) in subsets.iter().zip(results) {
        let d = r?;
        subset_objectives.push((users.clone(), d.objective));
        if best.as_ref().is_none_or(|b| d.objective > b.objective) {
            best = Some(d);
        }
    }
    Ok(ExhaustiveOutcome {
        decision: best.expect("at least one subset"),
        subsets_evaluated: subsets.len(),
        subset_objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(subset_count(2, 2), 3);
        assert_eq!(subset_count(4, 2), 10);
        assert_eq!(subset_count(3, 8), 7);
        assert_eq!(subset_count(32, 8), 15_033_172);
        for (k, m) in [(4, 2), (5, 3), (6, 6), (3, 1)] {
            assert_eq!(enumerate_subsets(k, m).len() as u128, subset_count(k, m));
        }
        assert_eq!(enumerate_subsets(2, 2), vec![vec![0], vec![1], vec![0, 1]]);
    }
}
