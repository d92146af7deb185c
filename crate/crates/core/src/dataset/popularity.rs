use serde::{Deserialize, Serialize};

use super::{Part, SplitDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stratum {
    Head,
    Mid,
    Cold,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Head, Stratum::Mid, Stratum::Cold];

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Head => "Head",
            Stratum::Mid => "Mid",
            Stratum::Cold => "Cold",
        }
    }
}

/// Train-interaction counts per item and the Head/Mid/Cold popularity tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityTable {
    pub counts: Vec<usize>,
    pub strata: Vec<Stratum>,
}

impl PopularityTable {
    /// Head is the top ⌈20%⌉ of items by count, Mid the next ⌈20%⌉ (capped),
    /// Cold the rest. Ties go to the smaller item id.
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let n = counts.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let tier = (n as f64 * 0.2).ceil() as usize;
        let head = tier.min(n);
        let mid = tier.min(n - head);
        let mut strata = vec![Stratum::Cold; n];
        for (rank, &item) in order.iter().enumerate() {
            strata[item] = if rank < head {
                Stratum::Head
            } else if rank < head + mid {
                Stratum::Mid
            } else {
                Stratum::Cold
            };
        }
        Self { counts, strata }
    }

    pub fn stratum(&self, item: u32) -> Stratum {
        self.strata[item as usize]
    }

    pub fn size(&self, s: Stratum) -> usize {
        self.strata.iter().filter(|&&x| x == s).count()
    }
}

pub fn popularity_strata(split: &SplitDataset) -> PopularityTable {
    let mut counts = vec![0; split.n_items()];
    for (_, item) in split.pairs(Part::Train) {
        counts[item as usize] += 1;
    }
    PopularityTable::from_counts(counts)
}
