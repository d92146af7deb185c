//! Geometric and downstream agreement between a mapped space and its target.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Part, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{split_queries, DotScorer, Query};
use crate::linalg;
use crate::metrics::{list_jaccard, recall_at_k, top_k_from, RankingResult};
use crate::rng;

fn same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `1 − SS_res / SS_tot`, pooled over all entries; `SS_tot` is centered on
/// each target column's mean.
pub fn r_squared(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    same_shape(pred, target)?;
    let means = linalg::column_means(target);
    let ss_tot: f64 = (&target - &means).iter().map(|v| v * v).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::Undefined("R² undefined: target has zero variance".into()));
    }
    let ss_res: f64 = (&pred - &target).iter().map(|v| v * v).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean row-wise cosine; rows where either side is zero contribute 0.
pub fn mean_cosine(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    same_shape(pred, target)?;
    if pred.nrows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = pred
        .outer_iter()
        .zip(target.outer_iter())
        .map(|(p, t)| {
            let (np, nt) = (p.dot(&p).sqrt(), t.dot(&t).sqrt());
            if np > 0.0 && nt > 0.0 {
                p.dot(&t) / (np * nt)
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / pred.nrows() as f64)
}

/// Top-`k` cosine neighbours of every row, self excluded, ties by ascending index.
pub fn cosine_neighbors(m: ArrayView2<f64>, k: usize) -> Vec<Vec<u32>> {
    let unit = linalg::normalized_rows(m);
    (0..unit.nrows())
        .into_par_iter()
        .map(|i| {
            let sims = unit.dot(&unit.row(i));
            let cands = sims
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &s)| (j as u32, s));
            let mut list = top_k_from(cands, k);
            list.sort_unstable();
            list
        })
        .collect()
}

fn jaccard_sorted(a: &[u32], b: &[u32]) -> f64 {
    let inter = a.iter().filter(|x| b.binary_search(x).is_ok()).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean Jaccard of each row's `k` nearest cosine neighbours in the two spaces.
pub fn geo_jaccard(pred: ArrayView2<f64>, target: ArrayView2<f64>, k: usize) -> Result<f64> {
    same_shape(pred, target)?;
    let n = pred.nrows();
    if k == 0 || k >= n {
        return Err(Error::Config(format!("neighbour count {k} must be in 1..{n}")));
    }
    let a = cosine_neighbors(pred, k);
    let b = cosine_neighbors(target, k);
    Ok(a.iter().zip(&b).map(|(x, y)| jaccard_sorted(x, y)).sum::<f64>() / n as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation with average-rank ties; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va > 0.0 && vb > 0.0 {
        cov / (va * vb).sqrt()
    } else {
        0.0
    }
}

/// The seeded sample of other rows each row is ranked against.
pub fn rank_sample(n: usize, row: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::substream(rng::derive_seed(seed, "rankcor", row as u64), "sample");
    index::sample(&mut r, n - 1, size)
        .into_iter()
        .map(|j| if j >= row { j + 1 } else { j })
        .collect()
}

/// For every row, Spearman correlation between the cosine similarities to a
/// seeded sample of `sample` other rows in each space; mean over rows.
pub fn rank_correlation(pred: ArrayView2<f64>, target: ArrayView2<f64>, sample: usize, seed: u64) -> Result<f64> {
    same_shape(pred, target)?;
    let n = pred.nrows();
    if n < 2 || sample == 0 || sample > n - 1 {
        return Err(Error::Config(format!("rank sample {sample} must be in 1..={}", n.saturating_sub(1))));
    }
    let (up, ut) = (linalg::normalized_rows(pred), linalg::normalized_rows(target));
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let others = rank_sample(n, i, sample, seed);
            let sp: Vec<f64> = others.iter().map(|&j| up.row(i).dot(&up.row(j))).collect();
            let st: Vec<f64> = others.iter().map(|&j| ut.row(i).dot(&ut.row(j))).collect();
            spearman(&sp, &st)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total / n as f64)
}

/// How downstream recall treats items outside the evaluated partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    /// Only partition items are candidates.
    Restricted,
    /// Every item is a candidate; only partition items carry projected vectors,
    /// the rest keep their target vectors.
    FullCatalog,
}

impl RecallMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RecallMode::Restricted => "restricted",
            RecallMode::FullCatalog => "full_catalog",
        }
    }
}

fn partition_mask(n_items: usize, partition: &[u32]) -> Vec<bool> {
    let mut mask = vec![false; n_items];
    for &i in partition {
        mask[i as usize] = true;
    }
    mask
}

/// Test queries with ground truth restricted to `mask`.
fn partition_queries(split: &SplitDataset, mask: &[bool]) -> Vec<Query> {
    split_queries(split, Part::Test)
        .into_iter()
        .map(|mut q| {
            q.truth.retain(|&i| mask[i as usize]);
            q
        })
        .collect()
}

/// `target` with the `partition` rows replaced by `projected`'s.
fn overlay(target: ArrayView2<f64>, projected: ArrayView2<f64>, partition: &[u32]) -> Array2<f64> {
    let mut out = target.to_owned();
    for &i in partition {
        out.row_mut(i as usize).assign(&projected.row(i as usize));
    }
    out
}

fn rank_both(
    users: ArrayView2<f64>,
    target: ArrayView2<f64>,
    projected: ArrayView2<f64>,
    queries: &[Query],
    k: usize,
    partition: &[u32],
    mode: RecallMode,
) -> (RankingResult, RankingResult) {
    let mask = partition_mask(target.nrows(), partition);
    let (ps_items, allowed) = match mode {
        RecallMode::Restricted => (projected.to_owned(), Some(mask.as_slice())),
        RecallMode::FullCatalog => (overlay(target, projected, partition), None),
    };
    let cf = DotScorer::new(users.to_owned(), target.to_owned()).rank(queries, k, allowed);
    let ps = DotScorer::new(users.to_owned(), ps_items).rank(queries, k, allowed);
    (cf, ps)
}

/// Mean Jaccard of each user's top-`k` list under target vs projected
/// item vectors, excluding the user's train positives.
pub fn probe_list_jaccard(
    users: ArrayView2<f64>,
    target: ArrayView2<f64>,
    projected: ArrayView2<f64>,
    split: &SplitDataset,
    k: usize,
    partition: &[u32],
    mode: RecallMode,
) -> Result<f64> {
    same_shape(target, projected)?;
    let queries: Vec<Query> = (0..split.n_users() as u32)
        .map(|u| Query { user: u, truth: Vec::new(), excluded: split.user_items(Part::Train, u).to_vec() })
        .collect();
    let (a, b) = rank_both(users, target, projected, &queries, k, partition, mode);
    Ok(list_jaccard(&a, &b)?.or_zero())
}

/// `(Recall(CF), Recall(Ps))` at `k` on test interactions whose item lies in `partition`.
pub fn probe_downstream_recall(
    users: ArrayView2<f64>,
    target: ArrayView2<f64>,
    projected: ArrayView2<f64>,
    split: &SplitDataset,
    k: usize,
    partition: &[u32],
    mode: RecallMode,
) -> Result<(f64, f64)> {
    same_shape(target, projected)?;
    let mask = partition_mask(target.nrows(), partition);
    let queries = partition_queries(split, &mask);
    let (a, b) = rank_both(users, target, projected, &queries, k, partition, mode);
    Ok((recall_at_k(&a).or_zero(), recall_at_k(&b).or_zero()))
}

/// Selects rows `ids` of `m`.
pub(crate) fn rows(m: ArrayView2<f64>, ids: &[u32]) -> Array2<f64> {
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    m.select(Axis(0), &idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn r_squared_conventions() {
        let t = array![[1.0, 2.0], [3.0, 5.0], [5.0, 11.0]];
        assert_eq!(r_squared(t.view(), t.view()).unwrap(), 1.0);
        let means = linalg::column_means(t.view());
        let mean_pred = Array2::from_shape_fn((3, 2), |(_, j)| means[j]);
        assert!(r_squared(mean_pred.view(), t.view()).unwrap().abs() < 1e-15);
        let flat = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(r_squared(flat.view(), flat.view()), Err(Error::Undefined(_))));
    }

    #[test]
    fn cosine_conventions() {
        let t = array![[1.0, 2.0], [0.0, 1.0]];
        assert!((mean_cosine(t.view(), t.view()).unwrap() - 1.0).abs() < 1e-15);
        let neg = -&t;
        assert!((mean_cosine(neg.view(), t.view()).unwrap() + 1.0).abs() < 1e-15);
        let z = array![[0.0, 0.0], [0.0, 1.0]];
        assert!((mean_cosine(z.view(), t.view()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_sample_excludes_self() {
        for row in 0..6 {
            let s = rank_sample(6, row, 5, 1);
            assert!(!s.contains(&row));
            let mut t = s.clone();
            t.sort_unstable();
            t.dedup();
            assert_eq!(t.len(), 5);
        }
    }
}
