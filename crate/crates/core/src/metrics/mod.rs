//! Top-K ranking metrics and complementarity diagnostics between two rankers.
//!
//! Every metric is a macro average over evaluation users. Users for which a
//! metric is undefined (empty ground truth, empty hit union, empty stratum)
//! are skipped and counted rather than silently scored as zero.

mod complementarity;
mod topk;

pub use complementarity::{
    comp_ratio, complementarity, hit_composition, hit_jaccard, list_jaccard, stratified_recall,
    stratified_union_bound, union_upper_bound, user_union_recall, CompMode, ComplementarityReport, HitComposition, StratifiedRecall,
};
pub use topk::{top_k, top_k_from};

use serde::{Deserialize, Serialize};

/// One user's ordered top-K list against their ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRanking {
    pub user: u32,
    /// Recommended items, best first.
    pub list: Vec<u32>,
    /// Ground-truth items, sorted ascending.
    pub truth: Vec<u32>,
    /// `list ∩ truth`, sorted ascending.
    pub hits: Vec<u32>,
}

impl UserRanking {
    pub fn new(user: u32, list: Vec<u32>, mut truth: Vec<u32>) -> Self {
        truth.sort_unstable();
        truth.dedup();
        let mut hits: Vec<u32> = list
            .iter()
            .copied()
            .filter(|i| truth.binary_search(i).is_ok())
            .collect();
        hits.sort_unstable();
        Self {
            user,
            list,
            truth,
            hits,
        }
    }
}

/// Top-K lists for a set of evaluation users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub k: usize,
    pub users: Vec<UserRanking>,
}

impl RankingResult {
    pub fn new(k: usize, users: Vec<UserRanking>) -> Self {
        Self { k, users }
    }

    /// Users whose list came out shorter than K (too few candidates).
    pub fn short_lists(&self) -> usize {
        self.users.iter().filter(|u| u.list.len() < self.k).count()
    }

    /// Lists truncated to a smaller cutoff.
    pub fn truncate(&self, k: usize) -> RankingResult {
        assert!(k <= self.k, "cannot extend a top-{} list to {k}", self.k);
        RankingResult {
            k,
            users: self
                .users
                .iter()
                .map(|u| UserRanking::new(u.user, u.list.iter().take(k).copied().collect(), u.truth.clone()))
                .collect(),
        }
    }
}

/// A macro average with its denominator and skip count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetric {
    /// `None` when no user qualified.
    pub value: Option<f64>,
    pub users: usize,
    pub skipped: usize,
}

impl MeanMetric {
    pub(crate) fn from_terms(terms: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut sum = 0.0;
        let mut users = 0;
        let mut skipped = 0;
        for t in terms {
            match t {
                Some(v) => {
                    sum += v;
                    users += 1;
                }
                None => skipped += 1,
            }
        }
        Self {
            value: (users > 0).then(|| sum / users as f64),
            users,
            skipped,
        }
    }

    /// The value, treating "no qualifying user" as 0.
    pub fn or_zero(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }
}

/// Per-user `|H_u| / |T_u|`; `None` for empty ground truth.
pub fn user_recall(u: &UserRanking) -> Option<f64> {
    (!u.truth.is_empty()).then(|| u.hits.len() as f64 / u.truth.len() as f64)
}

pub fn recall_at_k(res: &RankingResult) -> MeanMetric {
    MeanMetric::from_terms(res.users.iter().map(user_recall))
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

/// Binary-gain NDCG with a `1 / log₂(rank + 2)` discount (zero-based rank).
pub fn ndcg_at_k(res: &RankingResult) -> MeanMetric {
    MeanMetric::from_terms(res.users.iter().map(|u| {
        if u.truth.is_empty() {
            return None;
        }
        let dcg: f64 = u
            .list
            .iter()
            .take(res.k)
            .enumerate()
            .filter(|(_, i)| u.truth.binary_search(i).is_ok())
            .map(|(r, _)| discount(r))
            .sum();
        let idcg: f64 = (0..u.truth.len().min(res.k)).map(discount).sum();
        Some(dcg / idcg)
    }))
}

/// Fraction of users with at least one hit.
pub fn hit_at_k(res: &RankingResult) -> MeanMetric {
    MeanMetric::from_terms(res.users.iter().map(|u| {
        (!u.truth.is_empty()).then_some(if u.hits.is_empty() { 0.0 } else { 1.0 })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(k: usize, users: Vec<(Vec<u32>, Vec<u32>)>) -> RankingResult {
        RankingResult::new(
            k,
            users
                .into_iter()
                .enumerate()
                .map(|(u, (l, t))| UserRanking::new(u as u32, l, t))
                .collect(),
        )
    }

    #[test]
    fn recall_extremes() {
        let all = res(2, vec![(vec![1, 2], vec![1, 2]), (vec![3, 4], vec![4])]);
        assert_eq!(recall_at_k(&all).value, Some(1.0));
        let none = res(2, vec![(vec![1, 2], vec![5])]);
        assert_eq!(recall_at_k(&none).value, Some(0.0));
    }

    #[test]
    fn empty_truth_is_skipped() {
        let r = res(2, vec![(vec![1, 2], vec![1]), (vec![1, 2], vec![])]);
        let m = recall_at_k(&r);
        assert_eq!((m.value, m.users, m.skipped), (Some(1.0), 1, 1));
        assert_eq!(recall_at_k(&res(2, vec![])).value, None);
    }

    #[test]
    fn ndcg_formula() {
        assert_eq!(ndcg_at_k(&res(2, vec![(vec![7, 8], vec![7])])).value, Some(1.0));
        let second = ndcg_at_k(&res(2, vec![(vec![8, 7], vec![7])])).value.unwrap();
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((second - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn hit_rate() {
        assert_eq!(hit_at_k(&res(1, vec![(vec![1], vec![1]), (vec![2], vec![2, 3])])).value, Some(1.0));
        assert_eq!(hit_at_k(&res(1, vec![(vec![1], vec![4])])).value, Some(0.0));
    }

    #[test]
    fn truncation_recomputes_hits() {
        let r = res(3, vec![(vec![5, 6, 7], vec![7])]);
        assert_eq!(r.truncate(2).users[0].hits, Vec::<u32>::new());
        assert_eq!(r.short_lists(), 0);
    }
}
