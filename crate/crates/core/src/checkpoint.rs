//! On-disk model checkpoints: a directory of binary matrices plus `meta.json`.
//!
//! | kind   | matrices                                                    |
//! |--------|-------------------------------------------------------------|
//! | cf     | `users.bin`, `items.bin`                                    |
//! | sem    | `sem_weights.bin`, `sem_bias.bin` (1 × d)                   |
//! | fusion | `id_embeddings.bin` (users, then items), `sem_weights.bin`, `sem_bias.bin` |

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cf::CfModel;
use crate::dataset::{load_embeddings, save_embeddings, EmbeddingEncoding, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::fusion::FusionModel;
use crate::semantic::SemModel;

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cf,
    Sem,
    Fusion,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cf => "cf",
            ModelKind::Sem => "sem",
            ModelKind::Fusion => "fusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cf(CfModel),
    Sem(SemModel),
    Fusion(FusionModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Cf(_) => ModelKind::Cf,
            Model::Sem(_) => ModelKind::Sem,
            Model::Fusion(_) => ModelKind::Fusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub d_sem: usize,
    pub use_bias: bool,
    pub freeze_semantic: bool,
    /// Free-form provenance (hashes, seed, training summary).
    #[serde(default)]
    pub provenance: serde_json::Value,
}

fn write_matrix(dir: &Path, name: &str, m: Array2<f64>) -> Result<()> {
    save_embeddings(&EmbeddingMatrix::new(m)?, &dir.join(name), EmbeddingEncoding::Binary)
}

fn read_matrix(dir: &Path, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let m = load_embeddings(&dir.join(name))?;
    if m.n() != rows || m.d() != cols {
        return Err(Error::Format(format!(
            "{}: expected {rows}×{cols}, found {}×{}",
            dir.join(name).display(),
            m.n(),
            m.d()
        )));
    }
    Ok(m.into_values())
}

fn bias_matrix(b: &Array1<f64>) -> Array2<f64> {
    b.clone().insert_axis(Axis(0))
}

/// Writes `model` under `dir` (created if missing). Values are stored as f32.
pub fn save_checkpoint(dir: &Path, model: &Model, provenance: serde_json::Value) -> Result<CheckpointMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let (cf, sem, freeze) = match model {
        Model::Cf(m) => (Some(m), None, false),
        Model::Sem(m) => (None, Some(m), false),
        Model::Fusion(m) => (Some(&m.cf), Some(&m.sem), m.freeze_semantic),
    };
    match model {
        Model::Cf(cf) => {
            write_matrix(dir, "users.bin", cf.user_embeddings().to_owned())?;
            write_matrix(dir, "items.bin", cf.item_embeddings().to_owned())?;
        }
        Model::Fusion(f) => write_matrix(dir, "id_embeddings.bin", f.cf.stacked().clone())?,
        Model::Sem(_) => {}
    }
    if let Some(sem) = sem {
        write_matrix(dir, "sem_weights.bin", sem.weights.clone())?;
        write_matrix(dir, "sem_bias.bin", bias_matrix(&sem.bias))?;
    }
    let meta = CheckpointMeta {
        kind: model.kind(),
        n_users: cf.map_or(0, |m| m.n_users()),
        n_items: cf.map_or(0, |m| m.n_items()),
        dim: cf.map_or_else(|| sem.map_or(0, |s| s.dim()), |m| m.dim()),
        layers: cf.map_or(0, |m| m.layers()),
        d_sem: sem.map_or(0, |s| s.input_dim()),
        use_bias: sem.is_some_and(|s| s.use_bias),
        freeze_semantic: freeze,
        provenance,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(dir.join(META_FILE), json + "\n").map_err(|e| Error::io(format!("writing {}", dir.display()), e))?;
    Ok(meta)
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let meta = load_meta(dir)?;
    let load_cf = || -> Result<CfModel> {
        let (users, items) = if meta.kind == ModelKind::Cf {
            (
                read_matrix(dir, "users.bin", meta.n_users, meta.dim)?,
                read_matrix(dir, "items.bin", meta.n_items, meta.dim)?,
            )
        } else {
            let e = read_matrix(dir, "id_embeddings.bin", meta.n_users + meta.n_items, meta.dim)?;
            (
                e.slice(ndarray::s![..meta.n_users, ..]).to_owned(),
                e.slice(ndarray::s![meta.n_users.., ..]).to_owned(),
            )
        };
        CfModel::from_embeddings(&EmbeddingMatrix::new(users)?, &EmbeddingMatrix::new(items)?, meta.layers)
    };
    let load_sem = || -> Result<SemModel> {
        let weights = read_matrix(dir, "sem_weights.bin", meta.dim, meta.d_sem)?;
        let bias = read_matrix(dir, "sem_bias.bin", 1, meta.dim)?.row(0).to_owned();
        Ok(SemModel { weights, bias, use_bias: meta.use_bias })
    };
    let model = match meta.kind {
        ModelKind::Cf => Model::Cf(load_cf()?),
        ModelKind::Sem => Model::Sem(load_sem()?),
        ModelKind::Fusion => Model::Fusion(FusionModel {
            cf: load_cf()?,
            sem: load_sem()?,
            freeze_semantic: meta.freeze_semantic,
        }),
    };
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn cf_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng::substream(0, "t");
        let mut cf = CfModel::init(3, 4, 5, 1, 0.3, &mut r);
        cf.stacked_mut().mapv_inplace(|v| v as f32 as f64);
        save_checkpoint(dir.path(), &Model::Cf(cf.clone()), serde_json::Value::Null).unwrap();
        let (back, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!((meta.n_users, meta.n_items, meta.layers), (3, 4, 1));
        assert_eq!(back, Model::Cf(cf));
        assert_eq!(fs::metadata(dir.path().join("users.bin")).unwrap().len(), 12 + 4 * 15);
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng::substream(0, "t");
        let cf = CfModel::init(3, 4, 5, 2, 0.3, &mut r);
        let sem = SemModel::init(6, 5, true, &mut r);
        let fused = Model::Fusion(FusionModel { cf, sem, freeze_semantic: true });
        save_checkpoint(dir.path(), &fused, serde_json::json!({"seed": 0})).unwrap();
        let (back, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta.kind, ModelKind::Fusion);
        let Model::Fusion(f) = back else { panic!("wrong kind") };
        let Model::Fusion(orig) = &fused else { unreachable!() };
        assert!(f.freeze_semantic);
        for (a, b) in f.cf.stacked().iter().zip(orig.cf.stacked().iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(f.sem.weights.dim(), (5, 6));
        // a second save of the loaded model is byte-identical
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(dir2.path(), &Model::Fusion(f), serde_json::json!({"seed": 0})).unwrap();
        for name in ["id_embeddings.bin", "sem_weights.bin", "sem_bias.bin", META_FILE] {
            assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(dir2.path().join(name)).unwrap());
        }
    }
}
