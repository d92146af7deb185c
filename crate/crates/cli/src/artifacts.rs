//! Locating, hashing and loading run artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use complat_core::checkpoint::{load_checkpoint, CheckpointMeta, Model, META_FILE};
use complat_core::dataset::bundle::{INTERACTIONS_FILE, ITEMS_FILE, SPLIT_FILE, USERS_FILE};
use complat_core::dataset::{load_embeddings, load_split, EmbeddingMatrix, SplitDataset};
use complat_core::eval::DotScorer;
use complat_core::fusion::Branch;
use complat_core::graph::BipartiteGraph;
use complat_core::dataset::Part;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

pub const ITEM_VECTORS_FILE: &str = "item_vectors.bin";
pub const STATS_FILE: &str = "stats.json";
pub const CONFIG_FILE: &str = "config.json";
pub const WORLD_FILE: &str = "world.json";
pub const TRAIN_FILE: &str = "train.json";
pub const PROBE_CSV: &str = "probe.csv";
pub const PROBE_JSON: &str = "probe.json";
pub const DIAGNOSE_JSON: &str = "diagnose.json";
pub const COMPLEMENTARITY_CSV: &str = "complementarity.csv";
pub const FUSION_CSV: &str = "fusion.csv";
pub const STRATA_CSV: &str = "strata.csv";
pub const COMPOSITION_CSV: &str = "composition.csv";
pub const SINGLE_VIEW_CSV: &str = "single_view.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a serializable value's canonical JSON (sorted object keys).
pub fn config_hash<T: Serialize>(value: &T) -> CliResult<String> {
    let v = serde_json::to_value(value)?;
    Ok(sha256_hex(serde_json::to_string(&v)?.as_bytes()))
}

/// Hash over the files that define a dataset bundle.
pub fn dataset_hash(dir: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    for name in [USERS_FILE, ITEMS_FILE, INTERACTIONS_FILE, SPLIT_FILE, ITEM_VECTORS_FILE] {
        let p = dir.join(name);
        if name == ITEM_VECTORS_FILE && !p.exists() {
            continue;
        }
        let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// A dataset bundle loaded from disk.
pub struct Bundle {
    pub dir: PathBuf,
    pub split: SplitDataset,
    pub hash: String,
    item_vectors: Option<EmbeddingMatrix>,
}

impl Bundle {
    pub fn open(dir: &Path) -> CliResult<Self> {
        if !dir.join(SPLIT_FILE).exists() {
            return Err(CliError::data(format!(
                "no dataset bundle at {}; create one with `complat ingest` or `complat synth`",
                dir.display()
            )));
        }
        let split = load_split(dir)?;
        let vectors_path = dir.join(ITEM_VECTORS_FILE);
        let item_vectors = if vectors_path.exists() {
            let m = load_embeddings(&vectors_path)?;
            m.expect_rows(split.n_items(), "item vectors")?;
            Some(m)
        } else {
            None
        };
        Ok(Self { dir: dir.to_path_buf(), hash: dataset_hash(dir)?, split, item_vectors })
    }

    pub fn item_vectors(&self) -> CliResult<&EmbeddingMatrix> {
        self.item_vectors.as_ref().ok_or_else(|| {
            CliError::data(format!(
                "bundle {} has no {ITEM_VECTORS_FILE}; pass --item-vectors to `complat ingest`",
                self.dir.display()
            ))
        })
    }

    pub fn train_graph(&self) -> CliResult<BipartiteGraph> {
        Ok(BipartiteGraph::from_pairs(self.split.n_users(), self.split.n_items(), &self.split.pairs(Part::Train))?)
    }
}

/// Provenance block embedded in every artifact.
pub fn provenance(command: &str, config_hash: &str, dataset_hash: &str, seed: u64) -> Value {
    json!({
        "command": command,
        "config_hash": config_hash,
        "dataset_hash": dataset_hash,
        "seed": seed,
    })
}

/// `dir` or `dir#branch`, naming a checkpoint and optionally one fusion branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRef {
    pub dir: PathBuf,
    pub branch: Option<Branch>,
}

impl ModelRef {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s.rsplit_once('#') {
            Some((dir, b)) => {
                let branch =
                    Branch::parse(b).ok_or_else(|| CliError::usage(format!("unknown branch `{b}` in {s}")))?;
                Ok(Self { dir: PathBuf::from(dir), branch: Some(branch) })
            }
            None => Ok(Self { dir: PathBuf::from(s), branch: None }),
        }
    }

    pub fn display(&self) -> String {
        match self.branch {
            Some(b) => format!("{}#{}", self.dir.display(), b.as_str()),
            None => self.dir.display().to_string(),
        }
    }
}

/// Loads a checkpoint, naming the producing commands when it is missing.
pub fn open_checkpoint(dir: &Path) -> CliResult<(Model, CheckpointMeta)> {
    if !dir.join(META_FILE).exists() {
        return Err(CliError::data(format!(
            "no checkpoint at {}; produce one with `complat train-cf`, `complat train-sem` or `complat train-fusion`",
            dir.display()
        )));
    }
    Ok(load_checkpoint(dir)?)
}

/// Checks that a checkpoint was trained on `bundle`.
pub fn check_lineage(meta: &CheckpointMeta, dir: &Path, bundle: &Bundle) -> CliResult<()> {
    match meta.provenance.get("dataset_hash").and_then(Value::as_str) {
        Some(h) if h != bundle.hash => Err(CliError::data(format!(
            "checkpoint {} was trained on dataset {h}, not {}",
            dir.display(),
            bundle.hash
        ))),
        _ => Ok(()),
    }
}

/// Builds the scorer a model reference stands for.
pub fn scorer_for(r: &ModelRef, bundle: &Bundle) -> CliResult<(DotScorer, CheckpointMeta)> {
    let (model, meta) = open_checkpoint(&r.dir)?;
    check_lineage(&meta, &r.dir, bundle)?;
    let sized = !matches!(model, Model::Sem(_));
    if sized && (meta.n_users != bundle.split.n_users() || meta.n_items != bundle.split.n_items()) {
        return Err(CliError::data(format!(
            "checkpoint {} covers {}×{}, dataset has {}×{}",
            r.dir.display(),
            meta.n_users,
            meta.n_items,
            bundle.split.n_users(),
            bundle.split.n_items()
        )));
    }
    let scorer = match (&model, r.branch) {
        (Model::Cf(m), None | Some(Branch::Cf)) => m.scorer(&bundle.train_graph()?)?,
        (Model::Sem(m), None | Some(Branch::Sem)) => m.scorer(&bundle.split, bundle.item_vectors()?),
        (Model::Fusion(m), b) => {
            m.scorer(&bundle.train_graph()?, &bundle.split, bundle.item_vectors()?, b.unwrap_or(Branch::Fused))?
        }
        (_, Some(b)) => {
            return Err(CliError::usage(format!(
                "branch `{}` requires a fusion checkpoint, {} is {}",
                b.as_str(),
                r.dir.display(),
                meta.kind.as_str()
            )))
        }
    };
    Ok((scorer, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_refs() {
        assert_eq!(ModelRef::parse("a/b").unwrap(), ModelRef { dir: "a/b".into(), branch: None });
        let r = ModelRef::parse("m#sem").unwrap();
        assert_eq!(r.branch, Some(Branch::Sem));
        assert_eq!(r.display(), "m#sem");
        assert!(ModelRef::parse("m#zzz").is_err());
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        let a = config_hash(&json!({"b": 1, "a": 2})).unwrap();
        let b = config_hash(&json!({"a": 2, "b": 1})).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_bundle_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let err = Bundle::open(dir.path()).err().unwrap();
        assert!(err.message.contains("complat ingest"));
        assert_eq!(err.exit_code(), 2);
        let err = open_checkpoint(dir.path()).err().unwrap();
        assert!(err.message.contains("complat train-cf"));
    }
}
