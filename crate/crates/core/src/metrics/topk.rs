use std::cmp::Ordering;

fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best `(item, score)` candidates: descending score, ties by
/// ascending item id. Returns fewer than `k` items if the pool is smaller.
pub fn top_k_from(candidates: impl IntoIterator<Item = (u32, f64)>, k: usize) -> Vec<u32> {
    let mut pool: Vec<(u32, f64)> = candidates.into_iter().collect();
    if k == 0 {
        return Vec::new();
    }
    if pool.len() > k {
        pool.select_nth_unstable_by(k - 1, rank_order);
        pool.truncate(k);
    }
    pool.sort_unstable_by(rank_order);
    pool.into_iter().map(|(i, _)| i).collect()
}

/// Top-`k` items of a dense score row, skipping `excluded` (sorted ascending).
pub fn top_k(scores: &[f64], k: usize, excluded: &[u32]) -> Vec<u32> {
    debug_assert!(excluded.windows(2).all(|w| w[0] < w[1]));
    let mut skip = excluded.iter().peekable();
    let candidates = scores.iter().enumerate().filter_map(move |(i, &s)| {
        let i = i as u32;
        while skip.next_if(|&&e| e < i).is_some() {}
        if skip.peek() == Some(&&i) {
            None
        } else {
            Some((i, s))
        }
    });
    top_k_from(candidates, k)
}
