use std::collections::HashMap;
use std::path::Path;

use complat_core::dataset::{
    kcore_filter_mapped, load_embeddings, load_interactions, save_embeddings, save_split, split_per_user,
    EmbeddingEncoding, EmbeddingMatrix, FieldSeparator, InteractionDataset, InteractionFormat, SplitDataset,
    SplitRatios,
};
use complat_core::synth::{generate_world, LatentWorldConfig, WorldManifest};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{flag, log_start, record_config, settings};
use crate::artifacts::{
    dataset_hash, ensure_dir, provenance, write_json, ITEM_VECTORS_FILE, STATS_FILE, WORLD_FILE,
};
use crate::cli::{IngestArgs, SynthArgs};
use crate::config::parse_list;
use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct IngestSettings {
    kcore: usize,
    seed: u64,
    separator: String,
}

impl Default for IngestSettings {
    fn default() -> Self {
        Self { kcore: 5, seed: 42, separator: "tab".into() }
    }
}

fn stats_value(ds: &InteractionDataset) -> Value {
    let s = ds.stats();
    json!({
        "Users": s.users,
        "Items": s.items,
        "Interactions": s.interactions,
        "Sparsity": s.sparsity * 100.0,
    })
}

fn write_stats(out: &Path, split: &SplitDataset, before: Option<&InteractionDataset>, prov: Value) -> CliResult<()> {
    let mut doc = stats_value(split.base());
    if let Some(b) = before {
        doc["before_filter"] = stats_value(b);
    }
    doc["forced_users"] = json!(split.forced_users());
    doc["provenance"] = prov;
    write_json(&out.join(STATS_FILE), &doc)
}

/// Reorders vector rows to the filtered item ids.
fn align_vectors(
    vectors: &EmbeddingMatrix,
    raw: &InteractionDataset,
    kept_items: &[u32],
    ids_file: Option<&Path>,
) -> CliResult<EmbeddingMatrix> {
    let rows: Vec<u32> = match ids_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let ids: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()).collect();
            if ids.len() != vectors.n() {
                return Err(CliError::data(format!("{}: {} ids for {} vectors", p.display(), ids.len(), vectors.n())));
            }
            let index: HashMap<&str, u32> = ids.iter().enumerate().map(|(r, id)| (*id, r as u32)).collect();
            kept_items
                .iter()
                .map(|&old| {
                    let id = raw.item_raw_ids()[old as usize].as_str();
                    index.get(id).copied().ok_or_else(|| CliError::data(format!("no vector for item `{id}`")))
                })
                .collect::<CliResult<_>>()?
        }
        None => {
            if vectors.n() != raw.n_items() {
                return Err(CliError::data(format!(
                    "{} vectors for {} items; pass --item-ids to map rows to item ids",
                    vectors.n(),
                    raw.n_items()
                )));
            }
            kept_items.to_vec()
        }
    };
    Ok(vectors.select_rows(&rows))
}

pub fn ingest(a: &IngestArgs) -> CliResult<()> {
    let mut s = settings(
        "ingest",
        &a.common,
        vec![("kcore", flag(&a.kcore)), ("seed", flag(&a.seed)), ("separator", a.separator.clone())],
    )?;
    let cfg: IngestSettings = s.typed()?;
    let ratios: SplitRatios = s.typed()?;
    s.finish()?;
    let separator = match cfg.separator.as_str() {
        "tab" => FieldSeparator::Tab,
        "whitespace" => FieldSeparator::Whitespace,
        other => return Err(CliError::usage(format!("separator must be `tab` or `whitespace`, got `{other}`"))),
    };
    ensure_dir(&a.out)?;
    let hash = record_config(&a.out, "ingest", json!({ "ingest": cfg, "split": ratios }))?;
    log_start("ingest", cfg.seed, &hash);

    let raw = load_interactions(&a.interactions, InteractionFormat { separator })?;
    let (core, map) = kcore_filter_mapped(&raw, cfg.kcore)?;
    let split = split_per_user(&core, ratios, cfg.seed)?;
    save_split(&a.out, &split)?;
    if let Some(vp) = &a.item_vectors {
        let vectors = align_vectors(&load_embeddings(vp)?, &raw, &map.items, a.item_ids.as_deref())?;
        save_embeddings(&vectors, &a.out.join(ITEM_VECTORS_FILE), EmbeddingEncoding::Binary)?;
    }
    let prov = provenance("ingest", &hash, &dataset_hash(&a.out)?, cfg.seed);
    write_stats(&a.out, &split, Some(&raw), prov)?;
    let st = split.base().stats();
    log::info!(
        "ingest: {} users, {} items, {} interactions, sparsity {:.4}%",
        st.users,
        st.items,
        st.interactions,
        st.sparsity * 100.0
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut s = settings(
        "synth",
        &a.common,
        vec![
            ("alpha", a.alpha.clone()),
            ("seed", flag(&a.seed)),
            ("n_users", flag(&a.n_users)),
            ("n_items", flag(&a.n_items)),
            ("interactions_per_user", flag(&a.interactions_per_user)),
            ("noise_sigma", flag(&a.noise_sigma)),
        ],
    )?;
    let alphas: Vec<f64> = match s.take("alpha") {
        Some(raw) => parse_list("alpha", &raw)?,
        None => vec![LatentWorldConfig::default().alpha],
    };
    if alphas.is_empty() {
        return Err(CliError::usage("alpha list is empty"));
    }
    let base: LatentWorldConfig = s.typed()?;
    let ratios: SplitRatios = s.typed()?;
    s.finish()?;
    for &alpha in &alphas {
        let out = if alphas.len() == 1 { a.out.clone() } else { a.out.join(format!("alpha-{alpha}")) };
        ensure_dir(&out)?;
        let cfg = LatentWorldConfig { alpha, ..base.clone() };
        let hash = record_config(&out, "synth", json!({ "world": cfg, "split": ratios }))?;
        log_start("synth", cfg.seed, &hash);
        let world = generate_world(&cfg)?;
        let split = split_per_user(&world.dataset, ratios, cfg.seed)?;
        save_split(&out, &split)?;
        save_embeddings(&world.semantic, &out.join(ITEM_VECTORS_FILE), EmbeddingEncoding::Binary)?;
        write_json(&out.join(WORLD_FILE), &WorldManifest::from(&world))?;
        let prov = provenance("synth", &hash, &dataset_hash(&out)?, cfg.seed);
        write_stats(&out, &split, None, prov)?;
        log::info!("synth: alpha {alpha} -> {}", out.display());
    }
    Ok(())
}
