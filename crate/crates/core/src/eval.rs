//! Full-catalog ranking of users by dot-product scores.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::dataset::{Part, SplitDataset};
use crate::linalg;
use crate::metrics::{recall_at_k, top_k_from, RankingResult, UserRanking};

const BLOCK: usize = 128;

/// Scores user `u` against item `i` as `⟨users[u], items[i]⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct DotScorer {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

/// One user's evaluation request.
#[derive(Debug, Clone)]
pub struct Query {
    pub user: u32,
    pub truth: Vec<u32>,
    /// Sorted items that may not be recommended.
    pub excluded: Vec<u32>,
}

impl DotScorer {
    pub fn new(users: Array2<f64>, items: Array2<f64>) -> Self {
        assert_eq!(users.ncols(), items.ncols(), "user/item dimensions differ");
        Self { users, items }
    }

    /// Cosine scorer: both sides row-normalized.
    pub fn cosine(users: ArrayView2<f64>, items: ArrayView2<f64>) -> Self {
        Self::new(linalg::normalized_rows(users), linalg::normalized_rows(items))
    }

    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn score(&self, user: u32, item: u32) -> f64 {
        self.users.row(user as usize).dot(&self.items.row(item as usize))
    }

    /// Top-`k` lists for `queries`, optionally restricted to items with
    /// `allowed[i] == true`. Users are scored in parallel blocks; the output
    /// order follows `queries`.
    pub fn rank(&self, queries: &[Query], k: usize, allowed: Option<&[bool]>) -> RankingResult {
        let users = queries
            .par_chunks(BLOCK)
            .flat_map_iter(|block| {
                let idx: Vec<usize> = block.iter().map(|q| q.user as usize).collect();
                let scores = self.users.select(Axis(0), &idx).dot(&self.items.t());
                block
                    .iter()
                    .zip(scores.outer_iter())
                    .map(|(q, row)| {
                        let mut skip = q.excluded.iter().peekable();
                        let cands = row.iter().enumerate().filter_map(|(i, &s)| {
                            let i = i as u32;
                            while skip.next_if(|&&e| e < i).is_some() {}
                            if skip.peek() == Some(&&i) || allowed.is_some_and(|a| !a[i as usize]) {
                                None
                            } else {
                                Some((i, s))
                            }
                        });
                        UserRanking::new(q.user, top_k_from(cands, k), q.truth.clone())
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        RankingResult::new(k, users)
    }

    /// Ranks every user with `target` items, excluding what they saw before.
    pub fn rank_split(&self, split: &SplitDataset, target: Part, k: usize) -> RankingResult {
        self.rank(&split_queries(split, target), k, None)
    }
}

/// Queries for every user with items in `target`.
pub fn split_queries(split: &SplitDataset, target: Part) -> Vec<Query> {
    split
        .users_with(target)
        .into_iter()
        .map(|u| Query {
            user: u,
            truth: split.user_items(target, u).to_vec(),
            excluded: split.excluded_for(target, u),
        })
        .collect()
}

/// Validation Recall@k, the early-stopping signal.
pub fn val_recall(scorer: &DotScorer, split: &SplitDataset, k: usize) -> f64 {
    recall_at_k(&scorer.rank_split(split, Part::Val, k)).or_zero()
}
