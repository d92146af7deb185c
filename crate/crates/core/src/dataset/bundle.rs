//! On-disk form of a split dataset.
//!
//! A bundle directory holds `users.txt` and `items.txt` (raw ids in
//! contiguous-id order), `interactions.tsv` (`user<TAB>item<TAB>part[<TAB>ts]`
//! over contiguous ids) and `split.json`.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Interaction, InteractionDataset, Part, SplitDataset, SplitRatios};
use crate::error::{Error, Result};

pub const USERS_FILE: &str = "users.txt";
pub const ITEMS_FILE: &str = "items.txt";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitMeta {
    seed: u64,
    ratios: SplitRatios,
    n_users: usize,
    n_items: usize,
    n_interactions: usize,
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(f);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    std::io::BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Writes `split` under `dir`, creating it if needed.
pub fn save_split(dir: &Path, split: &SplitDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let base = split.base();
    write_lines(&dir.join(USERS_FILE), base.user_raw_ids())?;
    write_lines(&dir.join(ITEMS_FILE), base.item_raw_ids())?;
    let rows: Vec<String> = base
        .interactions()
        .iter()
        .zip(split.parts())
        .map(|(x, p)| match x.timestamp {
            Some(t) => format!("{}\t{}\t{}\t{t}", x.user, x.item, p.as_str()),
            None => format!("{}\t{}\t{}", x.user, x.item, p.as_str()),
        })
        .collect();
    write_lines(&dir.join(INTERACTIONS_FILE), &rows)?;
    let meta = SplitMeta {
        seed: split.seed(),
        ratios: split.ratios(),
        n_users: split.n_users(),
        n_items: split.n_items(),
        n_interactions: base.len(),
    };
    let path = dir.join(SPLIT_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a bundle written by [`save_split`].
pub fn load_split(dir: &Path) -> Result<SplitDataset> {
    let meta_path = dir.join(SPLIT_FILE);
    let meta: SplitMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(|e| Error::io(format!("reading {}", meta_path.display()), e))?,
    )?;
    let users = read_lines(&dir.join(USERS_FILE))?;
    let items = read_lines(&dir.join(ITEMS_FILE))?;
    let path = dir.join(INTERACTIONS_FILE);
    let mut interactions = Vec::new();
    let mut parts = Vec::new();
    for (n, line) in read_lines(&path)?.iter().enumerate() {
        let bad = |msg: &str| Error::Parse { path: path.clone(), line: n + 1, msg: msg.into() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 && f.len() != 4 {
            return Err(bad("expected 3 or 4 fields"));
        }
        let user = f[0].parse().map_err(|_| bad("bad user id"))?;
        let item = f[1].parse().map_err(|_| bad("bad item id"))?;
        let part = Part::parse(f[2]).ok_or_else(|| bad("bad part label"))?;
        let timestamp = match f.get(3) {
            Some(t) => Some(t.parse().map_err(|_| bad("bad timestamp"))?),
            None => None,
        };
        interactions.push(Interaction { user, item, timestamp });
        parts.push(part);
    }
    if users.len() != meta.n_users || items.len() != meta.n_items || interactions.len() != meta.n_interactions {
        return Err(Error::Validation(format!("bundle {} does not match its {SPLIT_FILE}", dir.display())));
    }
    let base = InteractionDataset::from_parts(users, items, interactions)?;
    SplitDataset::from_assignment(base, parts, meta.seed, meta.ratios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split_per_user;

    #[test]
    fn round_trip() {
        let pairs: Vec<(u32, u32)> = (0..6).flat_map(|u| (0..5).map(move |i| (u, (i + u) % 7))).collect();
        let ds = InteractionDataset::from_pairs(6, 7, &pairs).unwrap();
        let split = split_per_user(&ds, SplitRatios::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_split(dir.path(), &split).unwrap();
        let back = load_split(dir.path()).unwrap();
        assert_eq!(back.base(), split.base());
        assert_eq!(back.parts(), split.parts());
        assert_eq!(back.seed(), 3);
        for p in Part::ALL {
            assert_eq!(back.pairs(p), split.pairs(p));
        }
    }

    #[test]
    fn corrupt_line_is_parse_error() {
        let ds = InteractionDataset::from_pairs(1, 3, &[(0, 0), (0, 1), (0, 2)]).unwrap();
        let split = split_per_user(&ds, SplitRatios::default(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_split(dir.path(), &split).unwrap();
        fs::write(dir.path().join(INTERACTIONS_FILE), "0\t0\tnope\n").unwrap();
        assert!(matches!(load_split(dir.path()), Err(Error::Parse { .. })));
    }
}
