use serde::{Deserialize, Serialize};

use super::{hit_at_k, ndcg_at_k, recall_at_k, MeanMetric, RankingResult, UserRanking};
use crate::dataset::{PopularityTable, Stratum};
use crate::error::{Error, Result};

fn count_common(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn sorted(v: &[u32]) -> Vec<u32> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn paired<'a>(a: &'a RankingResult, b: &'a RankingResult) -> Result<Vec<(&'a UserRanking, &'a UserRanking)>> {
    if a.k != b.k {
        return Err(Error::Shape(format!("cutoffs differ: {} vs {}", a.k, b.k)));
    }
    if a.users.len() != b.users.len() || a.users.iter().zip(&b.users).any(|(x, y)| x.user != y.user) {
        return Err(Error::Shape("rankings cover different users".into()));
    }
    Ok(a.users.iter().zip(&b.users).collect())
}

/// Mean Jaccard of the two hit sets over users with a non-empty hit union.
pub fn hit_jaccard(a: &RankingResult, b: &RankingResult) -> Result<MeanMetric> {
    Ok(MeanMetric::from_terms(paired(a, b)?.into_iter().map(|(x, y)| {
        let inter = count_common(&x.hits, &y.hits);
        let union = x.hits.len() + y.hits.len() - inter;
        (union > 0).then(|| inter as f64 / union as f64)
    })))
}

/// Mean Jaccard of the two recommendation lists taken as sets.
pub fn list_jaccard(a: &RankingResult, b: &RankingResult) -> Result<MeanMetric> {
    Ok(MeanMetric::from_terms(paired(a, b)?.into_iter().map(|(x, y)| {
        let (la, lb) = (sorted(&x.list), sorted(&y.list));
        let inter = count_common(&la, &lb);
        let union = la.len() + lb.len() - inter;
        (union > 0).then(|| inter as f64 / union as f64)
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompMode {
    /// Mean over users of `|ΔH| / |∪H|`.
    Macro,
    /// `Σ|ΔH| / Σ|∪H|` pooled over users.
    Micro,
}

/// Share of hits unique to one of the two rankers (symmetric difference over union).
pub fn comp_ratio(a: &RankingResult, b: &RankingResult, mode: CompMode) -> Result<MeanMetric> {
    let parts: Vec<(usize, usize)> = paired(a, b)?
        .into_iter()
        .map(|(x, y)| {
            let inter = count_common(&x.hits, &y.hits);
            let union = x.hits.len() + y.hits.len() - inter;
            (union - inter, union)
        })
        .collect();
    Ok(match mode {
        CompMode::Macro => MeanMetric::from_terms(
            parts
                .iter()
                .map(|&(sym, union)| (union > 0).then(|| sym as f64 / union as f64)),
        ),
        CompMode::Micro => {
            let users = parts.iter().filter(|p| p.1 > 0).count();
            let sym: usize = parts.iter().map(|p| p.0).sum();
            let union: usize = parts.iter().map(|p| p.1).sum();
            MeanMetric {
                value: (union > 0).then(|| sym as f64 / union as f64),
                users,
                skipped: parts.len() - users,
            }
        }
    })
}

/// Per-user `|T ∩ (L_A ∪ L_B)| / |T|`.
pub fn user_union_recall(x: &UserRanking, y: &UserRanking) -> Option<f64> {
    if x.truth.is_empty() {
        return None;
    }
    let mut union = x.list.clone();
    union.extend_from_slice(&y.list);
    let union = sorted(&union);
    Some(count_common(&x.truth, &union) as f64 / x.truth.len() as f64)
}

/// Recall of the union of the two top-K lists: the ceiling for any
/// re-ranking of their candidates.
pub fn union_upper_bound(a: &RankingResult, b: &RankingResult) -> Result<MeanMetric> {
    let pairs = paired(a, b)?;
    if pairs.iter().any(|(x, y)| x.truth != y.truth) {
        return Err(Error::Shape("rankings were scored against different ground truth".into()));
    }
    Ok(MeanMetric::from_terms(
        pairs.into_iter().map(|(x, y)| user_union_recall(x, y)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratifiedRecall {
    pub head: MeanMetric,
    pub mid: MeanMetric,
    pub cold: MeanMetric,
}

impl StratifiedRecall {
    pub fn get(&self, s: Stratum) -> MeanMetric {
        match s {
            Stratum::Head => self.head,
            Stratum::Mid => self.mid,
            Stratum::Cold => self.cold,
        }
    }
}

fn stratified(
    users: &[&UserRanking],
    strata: &PopularityTable,
    retrieved: impl Fn(usize) -> Vec<u32>,
) -> StratifiedRecall {
    let per = |s: Stratum| {
        MeanMetric::from_terms(users.iter().enumerate().map(|(idx, u)| {
            let truth: Vec<u32> = u.truth.iter().copied().filter(|&i| strata.stratum(i) == s).collect();
            if truth.is_empty() {
                return None;
            }
            let got = sorted(&retrieved(idx));
            Some(count_common(&truth, &got) as f64 / truth.len() as f64)
        }))
    };
    StratifiedRecall {
        head: per(Stratum::Head),
        mid: per(Stratum::Mid),
        cold: per(Stratum::Cold),
    }
}

/// Recall restricted to each popularity stratum: `|H ∩ s| / |T ∩ s|` over
/// users with test items in `s`.
pub fn stratified_recall(res: &RankingResult, strata: &PopularityTable) -> StratifiedRecall {
    let users: Vec<&UserRanking> = res.users.iter().collect();
    stratified(&users, strata, |i| users[i].hits.clone())
}

/// [`union_upper_bound`] broken down by stratum.
pub fn stratified_union_bound(a: &RankingResult, b: &RankingResult, strata: &PopularityTable) -> Result<StratifiedRecall> {
    let pairs = paired(a, b)?;
    let users: Vec<&UserRanking> = pairs.iter().map(|p| p.0).collect();
    Ok(stratified(&users, strata, |i| {
        let mut l = pairs[i].0.list.clone();
        l.extend_from_slice(&pairs[i].1.list);
        l
    }))
}

/// Labels every hit of either branch as A-unique, B-unique or common.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitComposition {
    /// Total `Σ_u |H_A ∪ H_B|`.
    pub pool: usize,
    pub a_unique: Option<f64>,
    pub b_unique: Option<f64>,
    pub common: Option<f64>,
    /// Share of the fused model's hits that at least one branch also hits.
    pub fused_covered: Option<f64>,
}

pub fn hit_composition(
    fused: Option<&RankingResult>,
    a: &RankingResult,
    b: &RankingResult,
) -> Result<HitComposition> {
    let pairs = paired(a, b)?;
    let (mut only_a, mut only_b, mut both) = (0usize, 0usize, 0usize);
    for (x, y) in &pairs {
        let inter = count_common(&x.hits, &y.hits);
        both += inter;
        only_a += x.hits.len() - inter;
        only_b += y.hits.len() - inter;
    }
    let pool = only_a + only_b + both;
    let share = |n: usize| (pool > 0).then(|| n as f64 / pool as f64);
    let fused_covered = match fused {
        Some(f) => {
            let fp = paired(f, a)?;
            let (mut covered, mut total) = (0usize, 0usize);
            for ((fu, _), (x, y)) in fp.iter().zip(&pairs) {
                let mut union = x.hits.clone();
                union.extend_from_slice(&y.hits);
                let union = sorted(&union);
                covered += count_common(&fu.hits, &union);
                total += fu.hits.len();
            }
            (total > 0).then(|| covered as f64 / total as f64)
        }
        None => None,
    };
    Ok(HitComposition {
        pool,
        a_unique: share(only_a),
        b_unique: share(only_b),
        common: share(both),
        fused_covered,
    })
}

/// All pairwise diagnostics at one cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityReport {
    pub k: usize,
    pub recall_a: MeanMetric,
    pub recall_b: MeanMetric,
    pub ndcg_a: MeanMetric,
    pub ndcg_b: MeanMetric,
    pub hit_a: MeanMetric,
    pub hit_b: MeanMetric,
    pub list_jaccard: MeanMetric,
    pub hit_jaccard: MeanMetric,
    pub comp_ratio_macro: MeanMetric,
    pub comp_ratio_micro: MeanMetric,
    pub uub: MeanMetric,
    pub composition: HitComposition,
    pub strata_a: Option<StratifiedRecall>,
    pub strata_b: Option<StratifiedRecall>,
    pub strata_uub: Option<StratifiedRecall>,
}

pub fn complementarity(
    a: &RankingResult,
    b: &RankingResult,
    strata: Option<&PopularityTable>,
) -> Result<ComplementarityReport> {
    Ok(ComplementarityReport {
        k: a.k,
        recall_a: recall_at_k(a),
        recall_b: recall_at_k(b),
        ndcg_a: ndcg_at_k(a),
        ndcg_b: ndcg_at_k(b),
        hit_a: hit_at_k(a),
        hit_b: hit_at_k(b),
        list_jaccard: list_jaccard(a, b)?,
        hit_jaccard: hit_jaccard(a, b)?,
        comp_ratio_macro: comp_ratio(a, b, CompMode::Macro)?,
        comp_ratio_micro: comp_ratio(a, b, CompMode::Micro)?,
        uub: union_upper_bound(a, b)?,
        composition: hit_composition(None, a, b)?,
        strata_a: strata.map(|s| stratified_recall(a, s)),
        strata_b: strata.map(|s| stratified_recall(b, s)),
        strata_uub: strata.map(|s| stratified_union_bound(a, b, s)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(list: Vec<u32>, truth: Vec<u32>) -> RankingResult {
        RankingResult::new(list.len(), vec![UserRanking::new(0, list, truth)])
    }

    #[test]
    fn overlapping_hits() {
        let a = one(vec![1, 2, 8], vec![1, 2, 3]);
        let b = one(vec![2, 3, 9], vec![1, 2, 3]);
        assert!((hit_jaccard(&a, &b).unwrap().value.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for mode in [CompMode::Macro, CompMode::Micro] {
            assert!((comp_ratio(&a, &b, mode).unwrap().value.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_and_disjoint() {
        let a = one(vec![1, 2], vec![1, 2]);
        assert_eq!(hit_jaccard(&a, &a).unwrap().value, Some(1.0));
        assert_eq!(comp_ratio(&a, &a, CompMode::Macro).unwrap().value, Some(0.0));
        assert_eq!(list_jaccard(&a, &a).unwrap().value, Some(1.0));
        let b = one(vec![3, 4], vec![1, 2]);
        assert_eq!(list_jaccard(&a, &b).unwrap().value, Some(0.0));
        let c = hit_composition(None, &a, &a).unwrap();
        assert_eq!(c.common, Some(1.0));
    }

    #[test]
    fn empty_union_skipped() {
        let a = one(vec![5], vec![1]);
        let m = hit_jaccard(&a, &a).unwrap();
        assert_eq!((m.value, m.skipped), (None, 1));
        assert_eq!(hit_composition(None, &a, &a).unwrap().common, None);
    }

    #[test]
    fn uub_cases() {
        let a = one(vec![1, 2], vec![1, 2]);
        let b = one(vec![7, 8], vec![1, 2]);
        assert_eq!(union_upper_bound(&a, &b).unwrap().value, Some(1.0));
        let c = one(vec![5, 6], vec![1, 2]);
        assert_eq!(union_upper_bound(&c, &b).unwrap().value, Some(0.0));
    }

    #[test]
    fn mismatched_users_rejected() {
        let a = one(vec![1], vec![1]);
        let b = RankingResult::new(1, vec![UserRanking::new(3, vec![1], vec![1])]);
        assert!(matches!(hit_jaccard(&a, &b), Err(Error::Shape(_))));
        let c = RankingResult::new(2, a.users.clone());
        assert!(matches!(hit_jaccard(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn strata_on_head_only() {
        let table = PopularityTable::from_counts(vec![9, 1, 1, 1, 1]);
        let r = one(vec![0, 3], vec![0]);
        let s = stratified_recall(&r, &table);
        assert_eq!(s.head.value, Some(1.0));
        assert_eq!(s.mid.value, None);
        assert_eq!(s.cold.value, None);
        let miss = one(vec![3, 4], vec![0, 2]);
        let s = stratified_recall(&miss, &table);
        assert_eq!(s.head.value, Some(0.0));
        assert_eq!(s.cold.value, Some(0.0));
    }
}
