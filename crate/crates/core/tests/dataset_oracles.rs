//! Dataset operations against independent brute-force references.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use complat_core::dataset::*;
use complat_core::rng::substream;
use complat_core::Error;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn parse(text: &str) -> complat_core::Result<InteractionDataset> {
    parse_interactions(text.as_bytes(), Path::new("mem"), InteractionFormat::default())
}

#[test]
fn three_lines_two_users_two_items() {
    let ds = parse("u1\ti1\nu1\ti2\nu2\ti1\n").unwrap();
    assert_eq!((ds.n_users(), ds.n_items(), ds.len()), (2, 2, 3));
}

#[test]
fn repeated_pair_kept_once_with_earliest_timestamp() {
    let text: String = [5, 3, 9, 4, 7].iter().map(|t| format!("a\tb\t{t}\n")).collect();
    let ds = parse(&text).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.interactions()[0].timestamp, Some(3));
}

#[test]
fn malformed_and_empty_inputs() {
    match parse("a\tb\nonly-one-field\n") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(parse("a\tb\tnot-a-time\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse(""), Err(Error::EmptyDataset)));
    assert!(matches!(parse("\n\n"), Err(Error::EmptyDataset)));
}

/// Line-by-line reference: first-seen ids, min timestamp per pair.
fn reference_parse(text: &str) -> (Vec<String>, Vec<String>, BTreeMap<(usize, usize), Option<i64>>) {
    let (mut users, mut items) = (Vec::<String>::new(), Vec::<String>::new());
    let mut pairs: BTreeMap<(usize, usize), Option<i64>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let u = users.iter().position(|x| x == f[0]).unwrap_or_else(|| {
            users.push(f[0].to_string());
            users.len() - 1
        });
        let i = items.iter().position(|x| x == f[1]).unwrap_or_else(|| {
            items.push(f[1].to_string());
            items.len() - 1
        });
        let t = f.get(2).map(|s| s.parse::<i64>().unwrap());
        pairs
            .entry((u, i))
            .and_modify(|old| {
                *old = match (*old, t) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            })
            .or_insert(t);
    }
    (users, items, pairs)
}

#[test]
fn random_file_matches_reference_parser() {
    let mut rng = substream(7, "parser-oracle");
    let mut text = String::new();
    for _ in 0..10_000 {
        let u = rng.random_range(0..300);
        let i = rng.random_range(0..500);
        if rng.random_bool(0.5) {
            text.push_str(&format!("user{u}\titem-{i}\t{}\n", rng.random_range(0..1_000_000)));
        } else {
            text.push_str(&format!("user{u}\titem-{i}\n"));
        }
        if rng.random_bool(0.01) {
            text.push('\n');
        }
    }
    let ds = parse(&text).unwrap();
    let (users, items, pairs) = reference_parse(&text);
    assert_eq!(ds.user_raw_ids(), users.as_slice());
    assert_eq!(ds.item_raw_ids(), items.as_slice());
    let got: BTreeMap<(usize, usize), Option<i64>> = ds
        .interactions()
        .iter()
        .map(|x| ((x.user as usize, x.item as usize), x.timestamp))
        .collect();
    assert_eq!(got, pairs);
}

#[test]
fn load_from_file_matches_parse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.tsv");
    std::fs::write(&path, "u1\ti1\t10\nu2\ti1\t5\n").unwrap();
    let ds = load_interactions(&path, InteractionFormat::default()).unwrap();
    assert_eq!(ds, parse("u1\ti1\t10\nu2\ti1\t5\n").unwrap());
    assert!(matches!(
        load_interactions(&dir.path().join("missing.tsv"), InteractionFormat::default()),
        Err(Error::Io { .. })
    ));
}

fn naive_kcore(pairs: &BTreeSet<(String, String)>, k: usize) -> BTreeSet<(String, String)> {
    let mut cur = pairs.clone();
    loop {
        let mut du: HashMap<&str, usize> = HashMap::new();
        let mut di: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &cur {
            *du.entry(u).or_default() += 1;
            *di.entry(i).or_default() += 1;
        }
        let next: BTreeSet<(String, String)> = cur
            .iter()
            .filter(|(u, i)| du[u.as_str()] >= k && di[i.as_str()] >= k)
            .cloned()
            .collect();
        if next.len() == cur.len() {
            return next;
        }
        cur = next;
    }
}

fn raw_pairs(ds: &InteractionDataset) -> BTreeSet<(String, String)> {
    ds.interactions()
        .iter()
        .map(|x| (ds.user_raw_ids()[x.user as usize].clone(), ds.item_raw_ids()[x.item as usize].clone()))
        .collect()
}

#[test]
fn kcore_matches_fixed_point_oracle() {
    for seed in 0..40 {
        let mut rng = substream(seed, "kcore-oracle");
        let mut pairs = BTreeSet::new();
        while pairs.len() < 200 {
            pairs.insert((rng.random_range(0..30u32), rng.random_range(0..25u32)));
        }
        let pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
        let ds = InteractionDataset::from_pairs(30, 25, &pairs).unwrap();
        let expected = naive_kcore(&raw_pairs(&ds), 3);
        match kcore_filter(&ds, 3) {
            Ok(f) => {
                assert_eq!(raw_pairs(&f), expected, "seed {seed}");
                assert!(f.user_degrees().iter().all(|&d| d >= 3));
                assert!(f.item_degrees().iter().all(|&d| d >= 3));
                assert_eq!(kcore_filter(&f, 3).unwrap(), f, "idempotence");
            }
            Err(Error::EmptyAfterFilter { k: 3 }) => assert!(expected.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn kcore_examples() {
    let star = InteractionDataset::from_pairs(1, 5, &[(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
    assert!(matches!(kcore_filter(&star, 2), Err(Error::EmptyAfterFilter { k: 2 })));
    let clique: Vec<(u32, u32)> = (0..5).flat_map(|u| (0..5).map(move |i| (u, i))).collect();
    let ds = InteractionDataset::from_pairs(5, 5, &clique).unwrap();
    assert_eq!(kcore_filter(&ds, 5).unwrap(), ds);
    assert!(matches!(kcore_filter(&ds, 0), Err(Error::Config(_))));
}

#[test]
fn sparsity_values() {
    // Amazon'23 Movies after 5-core: 27,292 users, 24,608 items, 331,049 interactions
    let pairs: Vec<(u32, u32)> = (0..331_049u32).map(|k| (k % 27_292, (k / 27_292) * 1_000 + k % 997)).collect();
    let movies = InteractionDataset::from_pairs(27_292, 24_608, &pairs).unwrap();
    assert!((compute_sparsity(&movies) * 100.0 - 99.95).abs() <= 0.01);
    assert_eq!(movies.stats().interactions, 331_049);
    let clique: Vec<(u32, u32)> = (0..4).flat_map(|u| (0..3).map(move |i| (u, i))).collect();
    assert_eq!(compute_sparsity(&InteractionDataset::from_pairs(4, 3, &clique).unwrap()), 0.0);
    let one = InteractionDataset::from_pairs(10, 10, &[(0, 0)]).unwrap();
    assert!((compute_sparsity(&one) - 0.99).abs() < 1e-15);
}

#[test]
fn split_matches_reference_partitioner() {
    let mut rng = substream(3, "split-data");
    let mut pairs = BTreeSet::new();
    for u in 0..100u32 {
        let n = rng.random_range(1..40);
        while pairs.iter().filter(|(x, _)| *x == u).count() < n {
            pairs.insert((u, rng.random_range(0..60u32)));
        }
    }
    let pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
    let ds = InteractionDataset::from_pairs(100, 60, &pairs).unwrap();
    let ratios = SplitRatios::default();
    let split = split_per_user(&ds, ratios, 99).unwrap();

    // reference: same stream, users in id order, shuffle then cut
    let mut stream = substream(99, "split");
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); 100];
    for (idx, x) in ds.interactions().iter().enumerate() {
        by_user[x.user as usize].push(idx);
    }
    let mut forced = 0;
    for (u, group) in by_user.iter_mut().enumerate() {
        group.shuffle(&mut stream);
        let n = group.len();
        let (t, v) = if n < 3 {
            forced += 1;
            (n, 0)
        } else {
            let v = ((0.1 * n as f64).round() as usize).max(1);
            let te = ((0.1 * n as f64).round() as usize).max(1);
            (n - v - te, v)
        };
        for (pos, &idx) in group.iter().enumerate() {
            let expect = if pos < t {
                Part::Train
            } else if pos < t + v {
                Part::Val
            } else {
                Part::Test
            };
            assert_eq!(split.parts()[idx], expect, "user {u}");
        }
    }
    assert_eq!(split.forced_users(), forced);
    let total: usize = Part::ALL.iter().map(|&p| split.indices(p).len()).sum();
    assert_eq!(total, ds.len());
    assert!((0..100).all(|u| !split.user_items(Part::Train, u).is_empty()));
}

#[test]
fn embedding_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = substream(1, "emb");
    let m = EmbeddingMatrix::new(Array2::from_shape_simple_fn((1000, 64), || rng.random_range(-3.0..3.0))).unwrap();
    let bin = dir.path().join("m.bin");
    let txt = dir.path().join("m.txt");
    save_embeddings(&m, &bin, EmbeddingEncoding::Binary).unwrap();
    save_embeddings(&m, &txt, EmbeddingEncoding::Text).unwrap();
    assert_eq!(std::fs::metadata(&bin).unwrap().len(), 12 + 4 * 1000 * 64);
    let a = load_embeddings(&bin).unwrap();
    let b = load_embeddings(&txt).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, m.quantized());
    save_embeddings(&a, &bin, EmbeddingEncoding::Binary).unwrap();
    assert_eq!(load_embeddings(&bin).unwrap(), a);

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "emb v1 2 2\n1 2\n3\n").unwrap();
    assert!(matches!(load_embeddings(&bad), Err(Error::Format(_))));
    std::fs::write(&bad, "emb v1 1 2\n1 NaN\n").unwrap();
    assert!(matches!(load_embeddings(&bad), Err(Error::Validation(_))));
}

#[test]
fn strata_examples_and_sort_oracle() {
    let t = PopularityTable::from_counts((1..=10).rev().collect());
    let of = |s| (0..10u32).filter(|&i| t.stratum(i) == s).collect::<Vec<_>>();
    assert_eq!(of(Stratum::Head), vec![0, 1]);
    assert_eq!(of(Stratum::Mid), vec![2, 3]);
    assert_eq!(of(Stratum::Cold).len(), 6);
    let flat = PopularityTable::from_counts(vec![4; 10]);
    assert_eq!((0..10).map(|i| flat.stratum(i)).collect::<Vec<_>>()[..4], [Stratum::Head, Stratum::Head, Stratum::Mid, Stratum::Mid]);

    let mut rng = substream(5, "strata");
    let counts: Vec<usize> = (0..500).map(|_| rng.random_range(0..30)).collect();
    let t = PopularityTable::from_counts(counts.clone());
    let mut order: Vec<(std::cmp::Reverse<usize>, u32)> = counts.iter().enumerate().map(|(i, &c)| (std::cmp::Reverse(c), i as u32)).collect();
    order.sort();
    for (rank, (_, item)) in order.iter().enumerate() {
        let expect = match rank {
            r if r < 100 => Stratum::Head,
            r if r < 200 => Stratum::Mid,
            _ => Stratum::Cold,
        };
        assert_eq!(t.stratum(*item), expect);
    }
    for n in [1usize, 2, 3, 7, 11, 99] {
        let t = PopularityTable::from_counts(vec![1; n]);
        let tier = (0.2 * n as f64).ceil() as usize;
        assert_eq!(t.size(Stratum::Head), tier.min(n));
        assert_eq!(t.size(Stratum::Mid), tier.min(n - tier.min(n)));
        assert_eq!(t.size(Stratum::Head) + t.size(Stratum::Mid) + t.size(Stratum::Cold), n);
    }
}

#[test]
fn strata_use_train_counts_only() {
    let pairs: Vec<(u32, u32)> = (0..5).flat_map(|u| (0..10).map(move |i| (u, i))).collect();
    let ds = InteractionDataset::from_pairs(5, 10, &pairs).unwrap();
    let split = split_per_user(&ds, SplitRatios::default(), 0).unwrap();
    let t = popularity_strata(&split);
    for i in 0..10u32 {
        let train = split.pairs(Part::Train).iter().filter(|&&(_, x)| x == i).count();
        assert_eq!(t.counts[i as usize], train);
    }
}
