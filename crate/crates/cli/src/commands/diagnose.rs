use complat_core::dataset::{popularity_strata, Part, Stratum};
use complat_core::metrics::{
    complementarity, hit_at_k, hit_composition, ndcg_at_k, recall_at_k, stratified_recall, ComplementarityReport,
    HitComposition, MeanMetric, RankingResult, StratifiedRecall,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{log_start, record_config, settings};
use crate::artifacts::{
    ensure_dir, provenance, scorer_for, write_json, write_text, Bundle, ModelRef, COMPLEMENTARITY_CSV,
    COMPOSITION_CSV, DIAGNOSE_JSON, FUSION_CSV, SINGLE_VIEW_CSV, STRATA_CSV,
};
use crate::cli::DiagnoseArgs;
use crate::config::parse_list;
use crate::error::{CliError, CliResult};
use crate::tables::{metric, num, opt, Table};

/// Metrics of the fused model at one cutoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusedAtK {
    pub recall: MeanMetric,
    pub ndcg: MeanMetric,
    pub hit: MeanMetric,
    pub strata: StratifiedRecall,
    pub composition: HitComposition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseAtK {
    #[serde(flatten)]
    pub pair: ComplementarityReport,
    pub fused: Option<FusedAtK>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Labels {
    pub a: String,
    pub b: String,
    pub fused: Option<String>,
}

pub const STRATA: [Stratum; 3] = [Stratum::Head, Stratum::Mid, Stratum::Cold];

fn default_label(r: &ModelRef, kind: &str) -> String {
    match r.branch {
        Some(b) => format!("fusion#{}", b.as_str()),
        None => kind.to_string(),
    }
}

pub fn single_view_table(labels: &Labels, rows: &[DiagnoseAtK]) -> Table {
    let mut t = Table::new(&["K", "Model", "Recall", "NDCG", "Hit", "Users"]);
    for r in rows {
        let p = &r.pair;
        let k = p.k.to_string();
        t.push(vec![k.clone(), labels.a.clone(), metric(&p.recall_a), metric(&p.ndcg_a), metric(&p.hit_a), p.recall_a.users.to_string()]);
        t.push(vec![k.clone(), labels.b.clone(), metric(&p.recall_b), metric(&p.ndcg_b), metric(&p.hit_b), p.recall_b.users.to_string()]);
        if let (Some(f), Some(name)) = (&r.fused, &labels.fused) {
            t.push(vec![k, name.clone(), metric(&f.recall), metric(&f.ndcg), metric(&f.hit), f.recall.users.to_string()]);
        }
    }
    t
}

pub fn complementarity_table(labels: &Labels, rows: &[DiagnoseAtK]) -> Table {
    let mut t = Table::new(&[
        "K", "A", "B", "Recall(A)", "Recall(B)", "ListJaccard", "HitJaccard", "CompRatio(macro)", "CompRatio(micro)",
        "UUB", "Users", "Skipped",
    ]);
    for r in rows {
        let p = &r.pair;
        t.push(vec![
            p.k.to_string(),
            labels.a.clone(),
            labels.b.clone(),
            metric(&p.recall_a),
            metric(&p.recall_b),
            metric(&p.list_jaccard),
            metric(&p.hit_jaccard),
            metric(&p.comp_ratio_macro),
            metric(&p.comp_ratio_micro),
            metric(&p.uub),
            p.hit_jaccard.users.to_string(),
            p.hit_jaccard.skipped.to_string(),
        ]);
    }
    t
}

pub fn fusion_table(labels: &Labels, rows: &[DiagnoseAtK]) -> Option<Table> {
    let name = labels.fused.as_ref()?;
    let mut t = Table::new(&[
        "K", "Model", "Recall(A)", "Recall(B)", "Recall(Fused)", "NDCG(Fused)", "Gain vs Best", "UUB", "Gap to UUB",
    ]);
    for r in rows {
        let f = r.fused.as_ref()?;
        let p = &r.pair;
        let best = p.recall_a.or_zero().max(p.recall_b.or_zero());
        let fused = f.recall.or_zero();
        let gain = if best > 0.0 { fused / best - 1.0 } else { f64::NAN };
        t.push(vec![
            p.k.to_string(),
            name.clone(),
            metric(&p.recall_a),
            metric(&p.recall_b),
            metric(&f.recall),
            metric(&f.ndcg),
            num(gain),
            metric(&p.uub),
            num(p.uub.or_zero() - fused),
        ]);
    }
    Some(t)
}

pub fn strata_table(labels: &Labels, rows: &[DiagnoseAtK], sizes: &[usize; 3]) -> Table {
    let mut t = Table::new(&["K", "Stratum", "Items", "Recall(A)", "Recall(B)", "Recall(Fused)", "UUB", "A", "B"]);
    for r in rows {
        let p = &r.pair;
        let (Some(sa), Some(sb), Some(su)) = (&p.strata_a, &p.strata_b, &p.strata_uub) else { continue };
        for (s, size) in STRATA.iter().zip(sizes) {
            t.push(vec![
                p.k.to_string(),
                s.as_str().to_string(),
                size.to_string(),
                metric(&sa.get(*s)),
                metric(&sb.get(*s)),
                r.fused.as_ref().map(|f| metric(&f.strata.get(*s))).unwrap_or_default(),
                metric(&su.get(*s)),
                labels.a.clone(),
                labels.b.clone(),
            ]);
        }
    }
    t
}

pub fn composition_table(labels: &Labels, rows: &[DiagnoseAtK]) -> Table {
    let mut t = Table::new(&["K", "Pool", "A-Unique", "B-Unique", "Common", "Fused Covered", "A", "B"]);
    for r in rows {
        let c = r.fused.as_ref().map(|f| f.composition).unwrap_or(r.pair.composition);
        t.push(vec![
            r.pair.k.to_string(),
            c.pool.to_string(),
            opt(c.a_unique),
            opt(c.b_unique),
            opt(c.common),
            opt(c.fused_covered),
            labels.a.clone(),
            labels.b.clone(),
        ]);
    }
    t
}

pub fn diagnose(a: &DiagnoseArgs) -> CliResult<()> {
    let mut s = settings("diagnose", &a.common, vec![("k", a.k.clone()), ("part", a.part.clone())])?;
    let mut ks: Vec<usize> = parse_list("k", &s.take("k").unwrap_or_else(|| "5,10,20".into()))?;
    let part_raw = s.take("part").unwrap_or_else(|| "test".into());
    let label_a = s.take("label_a");
    let label_b = s.take("label_b");
    let label_f = s.take("label_fused");
    s.finish()?;
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(CliError::usage("cutoffs must be positive"));
    }
    let part = match Part::parse(&part_raw) {
        Some(p @ (Part::Val | Part::Test)) => p,
        _ => return Err(CliError::usage(format!("part must be `val` or `test`, got `{part_raw}`"))),
    };
    let bundle = Bundle::open(&a.data)?;
    let ra = ModelRef::parse(&a.a)?;
    let rb = ModelRef::parse(&a.b)?;
    let rf = a.fused.as_deref().map(ModelRef::parse).transpose()?;

    ensure_dir(&a.out)?;
    let refs = json!({ "a": ra.display(), "b": rb.display(), "fused": rf.as_ref().map(ModelRef::display) });
    let hash = record_config(&a.out, "diagnose", json!({ "k": ks, "part": part.as_str(), "models": refs }))?;
    log_start("diagnose", bundle.split.seed(), &hash);

    let kmax = *ks.last().expect("non-empty");
    let rank = |r: &ModelRef| -> CliResult<(RankingResult, String)> {
        let (scorer, meta) = scorer_for(r, &bundle)?;
        Ok((scorer.rank_split(&bundle.split, part, kmax), default_label(r, meta.kind.as_str())))
    };
    let (res_a, la) = rank(&ra)?;
    let (res_b, lb) = rank(&rb)?;
    let fused = rf.as_ref().map(rank).transpose()?;
    let labels = Labels {
        a: label_a.unwrap_or(la),
        b: label_b.unwrap_or(lb),
        fused: fused.as_ref().map(|(_, l)| label_f.clone().unwrap_or_else(|| l.clone())),
    };
    let strata = popularity_strata(&bundle.split);
    let mut rows = Vec::new();
    for &k in &ks {
        let (ak, bk) = (res_a.truncate(k), res_b.truncate(k));
        let pair = complementarity(&ak, &bk, Some(&strata))?;
        let fused_k = match &fused {
            Some((f, _)) => {
                let fk = f.truncate(k);
                Some(FusedAtK {
                    recall: recall_at_k(&fk),
                    ndcg: ndcg_at_k(&fk),
                    hit: hit_at_k(&fk),
                    strata: stratified_recall(&fk, &strata),
                    composition: hit_composition(Some(&fk), &ak, &bk)?,
                })
            }
            None => None,
        };
        log::info!(
            "diagnose@{k}: recall {:.4} / {:.4}, hit jaccard {}, uub {}",
            pair.recall_a.or_zero(),
            pair.recall_b.or_zero(),
            metric(&pair.hit_jaccard),
            metric(&pair.uub)
        );
        rows.push(DiagnoseAtK { pair, fused: fused_k });
    }
    let sizes = [strata.size(Stratum::Head), strata.size(Stratum::Mid), strata.size(Stratum::Cold)];
    write_text(&a.out.join(SINGLE_VIEW_CSV), &single_view_table(&labels, &rows).to_csv())?;
    write_text(&a.out.join(COMPLEMENTARITY_CSV), &complementarity_table(&labels, &rows).to_csv())?;
    write_text(&a.out.join(STRATA_CSV), &strata_table(&labels, &rows, &sizes).to_csv())?;
    write_text(&a.out.join(COMPOSITION_CSV), &composition_table(&labels, &rows).to_csv())?;
    if let Some(t) = fusion_table(&labels, &rows) {
        write_text(&a.out.join(FUSION_CSV), &t.to_csv())?;
    }
    let prov = provenance("diagnose", &hash, &bundle.hash, bundle.split.seed());
    write_json(
        &a.out.join(DIAGNOSE_JSON),
        &json!({
            "provenance": prov,
            "part": part.as_str(),
            "labels": labels,
            "models": refs,
            "strata_sizes": sizes,
            "results": rows,
        }),
    )
}
