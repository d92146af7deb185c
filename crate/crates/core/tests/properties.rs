//! Randomized invariants.

use complat_core::dataset::{kcore_filter, InteractionDataset};
use complat_core::graph::BipartiteGraph;
use complat_core::linalg;
use complat_core::metrics::{
    comp_ratio, hit_jaccard, list_jaccard, recall_at_k, union_upper_bound, user_recall, user_union_recall, CompMode,
    RankingResult, UserRanking,
};
use ndarray::Array2;
use proptest::collection::{btree_set, vec};
use proptest::prelude::*;

const N_ITEMS: u32 = 30;

fn ranking(k: usize) -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (
        Just(()).prop_perturb(move |_, mut rng| {
            let mut all: Vec<u32> = (0..N_ITEMS).collect();
            for i in (1..all.len()).rev() {
                all.swap(i, rng.random_range(0..=i));
            }
            all.truncate(k);
            all
        }),
        btree_set(0..N_ITEMS, 0..8).prop_map(|s| s.into_iter().collect()),
    )
}

fn paired(k: usize) -> impl Strategy<Value = (RankingResult, RankingResult)> {
    vec((ranking(k), ranking(k)), 1..12).prop_map(move |users| {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (u, ((la, truth), (lb, _))) in users.into_iter().enumerate() {
            a.push(UserRanking::new(u as u32, la, truth.clone()));
            b.push(UserRanking::new(u as u32, lb, truth));
        }
        (RankingResult::new(k, a), RankingResult::new(k, b))
    })
}

fn pairs_strategy() -> impl Strategy<Value = (usize, usize, Vec<(u32, u32)>)> {
    (2usize..15, 2usize..15).prop_flat_map(|(nu, ni)| {
        (Just(nu), Just(ni), btree_set((0..nu as u32, 0..ni as u32), 1..60).prop_map(|s| s.into_iter().collect()))
    })
}

proptest! {
    #[test]
    fn comp_ratio_complements_hit_jaccard((a, b) in paired(5)) {
        let cr = comp_ratio(&a, &b, CompMode::Macro).unwrap();
        let hj = hit_jaccard(&a, &b).unwrap();
        prop_assert_eq!(cr.users, hj.users);
        if let (Some(c), Some(h)) = (cr.value, hj.value) {
            prop_assert!((c + h - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&c));
        } else {
            prop_assert!(cr.value.is_none() && hj.value.is_none());
        }
        let micro = comp_ratio(&a, &b, CompMode::Micro).unwrap();
        if let Some(m) = micro.value {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn union_bound_dominates_each_view((a, b) in paired(6)) {
        for (x, y) in a.users.iter().zip(&b.users) {
            if let Some(u) = user_union_recall(x, y) {
                prop_assert!(u >= user_recall(x).unwrap());
                prop_assert!(u >= user_recall(y).unwrap());
                prop_assert!(u <= 1.0);
            }
        }
        let uub = union_upper_bound(&a, &b).unwrap().or_zero();
        prop_assert!(uub >= recall_at_k(&a).or_zero() - 1e-12);
        prop_assert!(uub >= recall_at_k(&b).or_zero() - 1e-12);
    }

    #[test]
    fn metrics_symmetric_and_order_invariant((a, b) in paired(4)) {
        let ab = hit_jaccard(&a, &b).unwrap();
        let ba = hit_jaccard(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        let lj = list_jaccard(&a, &b).unwrap().or_zero();
        prop_assert!((0.0..=1.0).contains(&lj));
        let mut rev_a = a.clone();
        let mut rev_b = b.clone();
        rev_a.users.reverse();
        rev_b.users.reverse();
        let r1 = recall_at_k(&a).or_zero();
        let r2 = recall_at_k(&rev_a).or_zero();
        prop_assert!((r1 - r2).abs() < 1e-12);
        let c1 = comp_ratio(&a, &b, CompMode::Macro).unwrap().or_zero();
        let c2 = comp_ratio(&rev_a, &rev_b, CompMode::Macro).unwrap().or_zero();
        prop_assert!((c1 - c2).abs() < 1e-12);
    }

    #[test]
    fn kcore_is_idempotent_and_satisfies_threshold((nu, ni, pairs) in pairs_strategy(), k in 1usize..4) {
        let ds = InteractionDataset::from_pairs(nu, ni, &pairs).unwrap();
        match kcore_filter(&ds, k) {
            Ok(core) => {
                prop_assert!(core.user_degrees().iter().all(|&d| d >= k));
                prop_assert!(core.item_degrees().iter().all(|&d| d >= k));
                let again = kcore_filter(&core, k).unwrap();
                prop_assert_eq!(again.len(), core.len());
                prop_assert!(core.len() <= ds.len());
            }
            Err(_) => prop_assert!(k > 1),
        }
    }

    #[test]
    fn sparsity_decreases_with_more_interactions((nu, ni, pairs) in pairs_strategy()) {
        let ds = InteractionDataset::from_pairs(nu, ni, &pairs).unwrap();
        let s = ds.stats().sparsity;
        prop_assert!((0.0..1.0).contains(&s));
        let mut more = pairs.clone();
        if let Some(extra) = (0..nu as u32).flat_map(|u| (0..ni as u32).map(move |i| (u, i))).find(|p| !pairs.contains(p)) {
            more.push(extra);
            more.sort_unstable();
            let ds2 = InteractionDataset::from_pairs(nu, ni, &more).unwrap();
            prop_assert!(ds2.stats().sparsity < s);
        }
    }

    #[test]
    fn norm_has_unit_length(v in vec(-1e3f64..1e3, 1..20)) {
        let n = linalg::norm(&v);
        if linalg::l2_norm(&v) > 0.0 {
            prop_assert!((linalg::l2_norm(&n) - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(n.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn propagation_is_linear((nu, ni, pairs) in pairs_strategy(), c in -3.0f64..3.0, seed in any::<u64>()) {
        let g = BipartiteGraph::from_pairs(nu, ni, &pairs).unwrap();
        let mut rng = complat_core::rng::substream(seed, "x");
        let mut draw = || Array2::from_shape_simple_fn((nu + ni, 3), || rand::Rng::random_range(&mut rng, -1.0..1.0));
        let (x, y) = (draw(), draw());
        let lhs = g.propagate(&(&x * c + &y), 2).unwrap();
        let rhs = g.propagate(&x, 2).unwrap() * c + g.propagate(&y, 2).unwrap();
        prop_assert!(lhs.iter().zip(rhs.iter()).all(|(p, q)| (p - q).abs() < 1e-10));
    }
}
