//! Alignment probes: capacity-swept mappings from the semantic item space to
//! the collaborative one, scored geometrically and downstream on train and
//! held-out items.

mod mapping;
mod metrics;

pub use mapping::{
    alignment_step, fit_probe, probe_loss, probe_loss_grad, split_items, train_contrastive_alignment,
    AlignmentHeads, Dense, ProbeArch, ProbeConfig, ProbeFit, ProbeMapping,
};
pub use metrics::{
    average_ranks, cosine_neighbors, geo_jaccard, mean_cosine, probe_downstream_recall, probe_list_jaccard,
    r_squared, rank_correlation, rank_sample, spearman, RecallMode,
};

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::{EmbeddingMatrix, SplitDataset};
use crate::error::{Error, Result};

/// Item partition a probe row was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemPartition {
    Train,
    Test,
}

impl ItemPartition {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemPartition::Train => "train",
            ItemPartition::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub model: String,
    pub partition: ItemPartition,
    pub r2: f64,
    pub cos: f64,
    pub geo_jaccard: f64,
    pub rank_cor: f64,
    pub list_jaccard: f64,
    pub recall_cf: f64,
    pub recall_ps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub k: usize,
    pub geo_k: usize,
    pub rank_sample: usize,
    pub recall_mode: RecallMode,
    pub item_fraction: f64,
    pub seed: u64,
    pub n_train_items: usize,
    pub n_test_items: usize,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    pub fn row(&self, model: &str, partition: ItemPartition) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.model == model && r.partition == partition)
    }

    pub fn arch_row(&self, arch: ProbeArch, partition: ItemPartition) -> Option<&ProbeRow> {
        self.row(arch.label(), partition)
    }

    pub const CSV_HEADER: &'static str = "Model,R²,Cos,GeoJac,RankCor,ListJac,Recall(CF),Recall(Ps),Partition";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.model,
                r.r2,
                r.cos,
                r.geo_jaccard,
                r.rank_cor,
                r.list_jaccard,
                r.recall_cf,
                r.recall_ps,
                r.partition.as_str()
            );
        }
        out
    }
}

/// Inputs shared by every probe row.
pub struct ProbeInputs<'a> {
    /// Source item vectors (the frozen semantic projection output).
    pub sem: &'a EmbeddingMatrix,
    /// Target item vectors (collaborative).
    pub cf_items: &'a EmbeddingMatrix,
    /// Collaborative user vectors, fixed for downstream scoring.
    pub cf_users: &'a EmbeddingMatrix,
    pub split: &'a SplitDataset,
}

#[allow(clippy::too_many_arguments)]
fn score_row(
    model: &str,
    partition: ItemPartition,
    ids: &[u32],
    pred_all: ArrayView2<f64>,
    target_all: ArrayView2<f64>,
    users: ArrayView2<f64>,
    inputs: &ProbeInputs<'_>,
    cfg: &ProbeConfig,
) -> Result<ProbeRow> {
    let pred = metrics::rows(pred_all, ids);
    let target = metrics::rows(target_all, ids);
    let n = ids.len();
    let r2 = match r_squared(pred.view(), target.view()) {
        Ok(v) => v,
        Err(Error::Undefined(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let geo = if n > 1 { geo_jaccard(pred.view(), target.view(), cfg.geo_k.min(n - 1))? } else { f64::NAN };
    let rank_cor = if n > 1 {
        rank_correlation(pred.view(), target.view(), cfg.rank_sample.min(n - 1), cfg.seed)?
    } else {
        f64::NAN
    };
    let list_jaccard =
        probe_list_jaccard(users, target_all, pred_all, inputs.split, cfg.k, ids, cfg.recall_mode)?;
    let (recall_cf, recall_ps) =
        probe_downstream_recall(users, target_all, pred_all, inputs.split, cfg.k, ids, cfg.recall_mode)?;
    Ok(ProbeRow {
        model: model.to_string(),
        partition,
        r2,
        cos: mean_cosine(pred.view(), target.view())?,
        geo_jaccard: geo,
        rank_cor,
        list_jaccard,
        recall_cf,
        recall_ps,
    })
}

/// Fits every architecture in `archs` on the train items and scores it on
/// both item partitions. With `alignment`, adds a contrastive-alignment row.
pub fn run_probe(inputs: &ProbeInputs<'_>, archs: &[ProbeArch], alignment: bool, cfg: &ProbeConfig) -> Result<ProbeReport> {
    cfg.validate()?;
    let n = inputs.sem.n();
    inputs.cf_items.expect_rows(n, "target item vectors")?;
    inputs.cf_users.expect_rows(inputs.split.n_users(), "target user vectors")?;
    if inputs.split.n_items() != n {
        return Err(Error::Shape(format!("{} items in split vs {} vectors", inputs.split.n_items(), n)));
    }
    let (train_ids, test_ids) = split_items(n, cfg.item_fraction, cfg.seed)?;
    let mut rows = Vec::new();
    let users = inputs.cf_users.view();
    let target = inputs.cf_items.view();
    for &arch in archs {
        let fit = fit_probe(inputs.sem, inputs.cf_items, &train_ids, arch, cfg)?;
        let pred = fit.mapping.apply(inputs.sem.view());
        for (part, ids) in [(ItemPartition::Train, &train_ids), (ItemPartition::Test, &test_ids)] {
            rows.push(score_row(arch.label(), part, ids, pred.view(), target, users, inputs, cfg)?);
        }
        log::info!("probe {}: {} epochs", arch.label(), fit.epochs);
    }
    if alignment {
        let heads = train_contrastive_alignment(inputs.sem, inputs.cf_items, &train_ids, cfg.align_tau, cfg)?;
        let pred = heads.g_sem.apply(inputs.sem.view());
        let tgt = heads.g_cf.apply(target);
        let aligned_users = heads.g_cf.apply(users);
        for (part, ids) in [(ItemPartition::Train, &train_ids), (ItemPartition::Test, &test_ids)] {
            rows.push(score_row(
                ALIGNMENT_LABEL,
                part,
                ids,
                pred.view(),
                tgt.view(),
                aligned_users.view(),
                inputs,
                cfg,
            )?);
        }
    }
    Ok(ProbeReport {
        k: cfg.k,
        geo_k: cfg.geo_k,
        rank_sample: cfg.rank_sample,
        recall_mode: cfg.recall_mode,
        item_fraction: cfg.item_fraction,
        seed: cfg.seed,
        n_train_items: train_ids.len(),
        n_test_items: test_ids.len(),
        rows,
    })
}

pub const ALIGNMENT_LABEL: &str = "Contrastive Align";

