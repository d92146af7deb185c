use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Val, Part::Test];

    fn slot(self) -> usize {
        match self {
            Part::Train => 0,
            Part::Val => 1,
            Part::Test => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Part> {
        match s {
            "train" => Some(Part::Train),
            "val" => Some(Part::Val),
            "test" => Some(Part::Test),
            _ => None,
        }
    }
}

/// Per-user train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive: {self:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for a user with `n` interactions, or `None`
    /// when the ratios cannot give every part at least one interaction.
    pub fn counts(&self, n: usize) -> Option<(usize, usize, usize)> {
        if n < 3 {
            return None;
        }
        let val = ((n as f64 * self.val).round() as usize).max(1);
        let test = ((n as f64 * self.test).round() as usize).max(1);
        if val + test >= n {
            return None;
        }
        Some((n - val - test, val, test))
    }
}

/// An [`InteractionDataset`] with every interaction assigned to one part.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    base: InteractionDataset,
    parts: Vec<Part>,
    seed: u64,
    ratios: SplitRatios,
    forced_users: usize,
    // sorted item lists per (part, user)
    by_user: [Vec<Vec<u32>>; 3],
}

impl SplitDataset {
    /// Wraps an explicit assignment, e.g. one read back from disk.
    pub fn from_assignment(
        base: InteractionDataset,
        parts: Vec<Part>,
        seed: u64,
        ratios: SplitRatios,
    ) -> Result<Self> {
        if parts.len() != base.len() {
            return Err(Error::Shape(format!(
                "{} part labels for {} interactions",
                parts.len(),
                base.len()
            )));
        }
        let mut by_user: [Vec<Vec<u32>>; 3] = std::array::from_fn(|_| vec![Vec::new(); base.n_users()]);
        for (x, p) in base.interactions().iter().zip(&parts) {
            by_user[p.slot()][x.user as usize].push(x.item);
        }
        for lists in by_user.iter_mut() {
            for l in lists.iter_mut() {
                l.sort_unstable();
            }
        }
        let degrees = base.user_degrees();
        if let Some(u) = (0..base.n_users()).find(|&u| degrees[u] > 0 && by_user[0][u].is_empty()) {
            return Err(Error::Validation(format!("user {u} has no train interaction")));
        }
        Ok(Self {
            base,
            parts,
            seed,
            ratios,
            forced_users: 0,
            by_user,
        })
    }

    pub fn base(&self) -> &InteractionDataset {
        &self.base
    }

    pub fn n_users(&self) -> usize {
        self.base.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.base.n_items()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ratios(&self) -> SplitRatios {
        self.ratios
    }

    /// Users whose split ignored the ratios (too few interactions).
    pub fn forced_users(&self) -> usize {
        self.forced_users
    }

    /// Part label of every base interaction, in base order.
    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn indices(&self, part: Part) -> Vec<usize> {
        (0..self.parts.len()).filter(|&i| self.parts[i] == part).collect()
    }

    /// `(user, item)` pairs of one part, in base order.
    pub fn pairs(&self, part: Part) -> Vec<(u32, u32)> {
        self.base
            .interactions()
            .iter()
            .zip(&self.parts)
            .filter(|(_, &p)| p == part)
            .map(|(x, _)| (x.user, x.item))
            .collect()
    }

    /// Sorted items of `user` in `part`.
    pub fn user_items(&self, part: Part, user: u32) -> &[u32] {
        &self.by_user[part.slot()][user as usize]
    }

    pub fn contains(&self, part: Part, user: u32, item: u32) -> bool {
        self.user_items(part, user).binary_search(&item).is_ok()
    }

    /// Users with at least one interaction in `part`.
    pub fn users_with(&self, part: Part) -> Vec<u32> {
        (0..self.n_users() as u32)
            .filter(|&u| !self.user_items(part, u).is_empty())
            .collect()
    }

    /// Items a ranking for `target` must never recommend: train positives
    /// when validating, train and val positives when testing.
    pub fn excluded_for(&self, target: Part, user: u32) -> Vec<u32> {
        match target {
            Part::Val => self.user_items(Part::Train, user).to_vec(),
            Part::Test => {
                let mut v: Vec<u32> = self
                    .user_items(Part::Train, user)
                    .iter()
                    .chain(self.user_items(Part::Val, user))
                    .copied()
                    .collect();
                v.sort_unstable();
                v
            }
            Part::Train => Vec::new(),
        }
    }
}

/// Seeded random per-user split.
///
/// Each user's interactions are shuffled with the `split` substream of
/// `seed` (users visited in id order) and cut by `ratios`, train taking the
/// remainder. Users with too few interactions for the ratios get a forced
/// assignment: everything but the last two to train, or everything to train
/// below three interactions.
pub fn split_per_user(ds: &InteractionDataset, ratios: SplitRatios, seed: u64) -> Result<SplitDataset> {
    ratios.validate()?;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); ds.n_users()];
    for (idx, x) in ds.interactions().iter().enumerate() {
        groups[x.user as usize].push(idx);
    }
    let mut rng = rng::substream(seed, "split");
    let mut parts = vec![Part::Train; ds.len()];
    let mut forced = 0;
    for group in groups.iter_mut() {
        group.shuffle(&mut rng);
        let n = group.len();
        let (n_train, n_val) = match ratios.counts(n) {
            Some((t, v, _)) => (t, v),
            None => {
                forced += 1;
                if n >= 3 {
                    (n - 2, 1)
                } else {
                    (n, 0)
                }
            }
        };
        for (pos, &idx) in group.iter().enumerate() {
            parts[idx] = if pos < n_train {
                Part::Train
            } else if pos < n_train + n_val {
                Part::Val
            } else {
                Part::Test
            };
        }
    }
    if forced > 0 {
        log::warn!("{forced} users had too few interactions for the split ratios");
    }
    let mut split = SplitDataset::from_assignment(ds.clone(), parts, seed, ratios)?;
    split.forced_users = forced;
    Ok(split)
}
