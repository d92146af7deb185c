//! Interaction ingestion, k-core filtering, per-user splits and popularity
//! statistics.

pub mod bundle;
mod embeddings;
mod popularity;
mod split;

pub use bundle::{load_split, save_split};
pub use embeddings::{load_embeddings, save_embeddings, EmbeddingEncoding, EmbeddingMatrix};
pub use popularity::{popularity_strata, PopularityTable, Stratum};
pub use split::{split_per_user, Part, SplitDataset, SplitRatios};

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One implicit-feedback event between contiguous user and item ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub timestamp: Option<i64>,
}

/// De-duplicated interaction table over contiguous ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    n_users: usize,
    n_items: usize,
    interactions: Vec<Interaction>,
    user_raw_ids: Vec<String>,
    item_raw_ids: Vec<String>,
}

impl InteractionDataset {
    /// Builds a dataset from parts, checking the id-range and uniqueness invariants.
    pub fn from_parts(
        user_raw_ids: Vec<String>,
        item_raw_ids: Vec<String>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        let n_users = user_raw_ids.len();
        let n_items = item_raw_ids.len();
        let mut seen = std::collections::HashSet::with_capacity(interactions.len());
        for x in &interactions {
            if x.user as usize >= n_users || x.item as usize >= n_items {
                return Err(Error::Validation(format!(
                    "interaction ({}, {}) outside id space {n_users}x{n_items}",
                    x.user, x.item
                )));
            }
            if !seen.insert((x.user, x.item)) {
                return Err(Error::Validation(format!(
                    "duplicate interaction ({}, {})",
                    x.user, x.item
                )));
            }
        }
        Ok(Self {
            n_users,
            n_items,
            interactions,
            user_raw_ids,
            item_raw_ids,
        })
    }

    /// Convenience constructor with synthetic raw ids `u<n>` / `i<n>`.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        Self::from_parts(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
            pairs
                .iter()
                .map(|&(user, item)| Interaction {
                    user,
                    item,
                    timestamp: None,
                })
                .collect(),
        )
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn user_raw_ids(&self) -> &[String] {
        &self.user_raw_ids
    }

    pub fn item_raw_ids(&self) -> &[String] {
        &self.item_raw_ids
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_users];
        for x in &self.interactions {
            d[x.user as usize] += 1;
        }
        d
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_items];
        for x in &self.interactions {
            d[x.item as usize] += 1;
        }
        d
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.n_users,
            items: self.n_items,
            interactions: self.interactions.len(),
            sparsity: compute_sparsity(self),
        }
    }
}

/// Summary row in the layout of the usual dataset-statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
}

/// Field separator of the interaction text format.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FieldSeparator {
    /// Exactly one TAB between fields.
    #[default]
    Tab,
    /// Any run of ASCII whitespace.
    Whitespace,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InteractionFormat {
    pub separator: FieldSeparator,
}

/// Reads `user<TAB>item[<TAB>timestamp]` records from `path`.
pub fn load_interactions(path: &Path, format: InteractionFormat) -> Result<InteractionDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_interactions(std::io::BufReader::new(file), path, format)
}

/// Parses interaction records from any reader. `source` only labels errors.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    source: &Path,
    format: InteractionFormat,
) -> Result<InteractionDataset> {
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut user_raw = Vec::new();
    let mut item_raw = Vec::new();
    let mut interactions: Vec<Interaction> = Vec::new();
    let mut index: HashMap<(u32, u32), usize> = HashMap::new();

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        msg,
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", source.display()), e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format.separator {
            FieldSeparator::Tab => line.split('\t').collect(),
            FieldSeparator::Whitespace => line.split_ascii_whitespace().collect(),
        };
        if fields.len() < 2 || fields.len() > 3 {
            return Err(parse_err(
                lineno,
                format!("expected 2 or 3 fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(lineno, "empty user or item field".into()));
        }
        let timestamp = match fields.get(2) {
            Some(t) => Some(
                t.trim()
                    .parse::<i64>()
                    .map_err(|_| parse_err(lineno, format!("bad timestamp {t:?}")))?,
            ),
            None => None,
        };
        let user = intern(&mut user_ids, &mut user_raw, fields[0]);
        let item = intern(&mut item_ids, &mut item_raw, fields[1]);
        match index.get(&(user, item)) {
            Some(&at) => {
                let kept = &mut interactions[at];
                kept.timestamp = match (kept.timestamp, timestamp) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            None => {
                index.insert((user, item), interactions.len());
                interactions.push(Interaction {
                    user,
                    item,
                    timestamp,
                });
            }
        }
    }
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ds = InteractionDataset {
        n_users: user_raw.len(),
        n_items: item_raw.len(),
        interactions,
        user_raw_ids: user_raw,
        item_raw_ids: item_raw,
    };
    log::info!(
        "loaded {} interactions over {} users and {} items",
        ds.len(),
        ds.n_users,
        ds.n_items
    );
    Ok(ds)
}

fn intern(map: &mut HashMap<String, u32>, raw: &mut Vec<String>, key: &str) -> u32 {
    if let Some(&id) = map.get(key) {
        return id;
    }
    let id = raw.len() as u32;
    map.insert(key.to_owned(), id);
    raw.push(key.to_owned());
    id
}

/// For each surviving contiguous id, the id it had before filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

/// Iteratively drops users and items with fewer than `k` interactions.
pub fn kcore_filter(ds: &InteractionDataset, k: usize) -> Result<InteractionDataset> {
    kcore_filter_mapped(ds, k).map(|(ds, _)| ds)
}

/// [`kcore_filter`] that also reports which old ids survived.
pub fn kcore_filter_mapped(ds: &InteractionDataset, k: usize) -> Result<(InteractionDataset, IdMap)> {
    if k == 0 {
        return Err(Error::Config("k-core requires k >= 1".into()));
    }
    let mut alive = vec![true; ds.interactions.len()];
    let mut user_deg = ds.user_degrees();
    let mut item_deg = ds.item_degrees();
    loop {
        let mut changed = false;
        for (x, live) in ds.interactions.iter().zip(alive.iter_mut()) {
            if *live && (user_deg[x.user as usize] < k || item_deg[x.item as usize] < k) {
                *live = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        user_deg.fill(0);
        item_deg.fill(0);
        for (x, _) in ds.interactions.iter().zip(&alive).filter(|(_, &l)| l) {
            user_deg[x.user as usize] += 1;
            item_deg[x.item as usize] += 1;
        }
    }
    if !alive.iter().any(|&l| l) {
        return Err(Error::EmptyAfterFilter { k });
    }

    let remap = |deg: &[usize]| {
        let mut new_of_old = vec![u32::MAX; deg.len()];
        let mut old_of_new = Vec::new();
        for (old, &d) in deg.iter().enumerate() {
            if d > 0 {
                new_of_old[old] = old_of_new.len() as u32;
                old_of_new.push(old as u32);
            }
        }
        (new_of_old, old_of_new)
    };
    let (new_user, old_users) = remap(&user_deg);
    let (new_item, old_items) = remap(&item_deg);
    let interactions = ds
        .interactions
        .iter()
        .zip(&alive)
        .filter(|(_, &l)| l)
        .map(|(x, _)| Interaction {
            user: new_user[x.user as usize],
            item: new_item[x.item as usize],
            timestamp: x.timestamp,
        })
        .collect();
    let filtered = InteractionDataset {
        n_users: old_users.len(),
        n_items: old_items.len(),
        interactions,
        user_raw_ids: old_users
            .iter()
            .map(|&u| ds.user_raw_ids[u as usize].clone())
            .collect(),
        item_raw_ids: old_items
            .iter()
            .map(|&i| ds.item_raw_ids[i as usize].clone())
            .collect(),
    };
    Ok((
        filtered,
        IdMap {
            users: old_users,
            items: old_items,
        },
    ))
}

/// `1 − |interactions| / (n_users · n_items)`.
pub fn compute_sparsity(ds: &InteractionDataset) -> f64 {
    let cells = ds.n_users as f64 * ds.n_items as f64;
    if cells == 0.0 {
        return 1.0;
    }
    1.0 - ds.interactions.len() as f64 / cells
}
