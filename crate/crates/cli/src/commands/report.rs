use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::diagnose::{
    complementarity_table, composition_table, fusion_table, single_view_table, strata_table, DiagnoseAtK, Labels,
};
use crate::artifacts::{
    ensure_dir, read_json, write_json, write_text, COMPLEMENTARITY_CSV, COMPOSITION_CSV, DIAGNOSE_JSON, FUSION_CSV,
    PROBE_CSV, PROBE_JSON, SINGLE_VIEW_CSV, STATS_FILE, STRATA_CSV, TRAIN_FILE,
};
use crate::cli::ReportArgs;
use crate::error::{io_err, CliError, CliResult};
use crate::tables::{metric, Table};

pub const REPORT_JSON: &str = "report.json";
pub const STATS_CSV: &str = "stats.csv";
pub const K_SWEEP_CSV: &str = "k_sweep.csv";

const SOURCES: [&str; 4] = [STATS_FILE, TRAIN_FILE, PROBE_JSON, DIAGNOSE_JSON];

/// Artifact files under `dir`, sorted, skipping `skip`.
fn collect(dir: &Path, skip: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_err(dir, err)))
        .collect::<CliResult<_>>()?;
    entries.sort();
    for p in entries {
        if p == skip {
            continue;
        }
        if p.is_dir() {
            collect(&p, skip, out)?;
        } else if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| SOURCES.contains(&n)) {
            out.push(p);
        }
    }
    Ok(())
}

fn run_label(root: &Path, file: &Path) -> String {
    let parent = file.parent().unwrap_or(root);
    match parent.strip_prefix(root) {
        Ok(rel) if rel.as_os_str().is_empty() => ".".into(),
        Ok(rel) => rel.display().to_string(),
        Err(_) => parent.display().to_string(),
    }
}

/// Prepends a `Run` column.
fn with_run(run: &str, t: &Table, into: &mut Option<Table>) {
    let target = into.get_or_insert_with(|| {
        let mut h = vec!["Run".to_string()];
        h.extend(t.header.iter().cloned());
        Table { header: h, rows: Vec::new() }
    });
    for r in &t.rows {
        let mut row = vec![run.to_string()];
        row.extend(r.iter().cloned());
        target.rows.push(row);
    }
}

fn parse_csv_simple(text: &str) -> Table {
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap_or_default();
    Table { header, rows: lines.collect() }
}

fn table_json(t: &Table) -> Value {
    json!({ "header": t.header, "rows": t.rows })
}

/// UUB must dominate both single-view recalls.
fn check_dominance(run: &str, rows: &[DiagnoseAtK]) -> CliResult<()> {
    for r in rows {
        let p = &r.pair;
        let (Some(u), ra, rb) = (p.uub.value, p.recall_a.or_zero(), p.recall_b.or_zero()) else { continue };
        if u < ra || u < rb {
            return Err(CliError {
                class: complat_core::ErrorClass::Numerical,
                message: format!("{run}: UUB@{} = {u} below a single-view recall ({ra}, {rb})", p.k),
            });
        }
    }
    Ok(())
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    if !a.run.is_dir() {
        return Err(CliError::data(format!("run directory {} does not exist", a.run.display())));
    }
    let out = a.out.clone().unwrap_or_else(|| a.run.join("report"));
    let mut files = Vec::new();
    collect(&a.run, &out, &mut files)?;
    if files.is_empty() {
        println!("nothing to report: no artifacts under {}", a.run.display());
        return Ok(());
    }
    let mut hashes = BTreeSet::new();
    let mut docs = Vec::new();
    for f in &files {
        let doc = read_json(f)?;
        if let Some(h) = doc.pointer("/provenance/dataset_hash").and_then(Value::as_str) {
            hashes.insert(h.to_string());
        }
        docs.push((f.clone(), doc));
    }
    if hashes.len() > 1 {
        return Err(CliError::data(format!(
            "artifacts under {} come from {} different datasets; report one dataset at a time",
            a.run.display(),
            hashes.len()
        )));
    }

    let (mut stats, mut single, mut comp, mut fusion, mut strata, mut compo, mut probe, mut sweep) =
        (None, None, None, None, None, None, None, None);
    let mut sources = Vec::new();
    for (f, doc) in &docs {
        let run = run_label(&a.run, f);
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        sources.push(json!({ "run": run, "file": name }));
        match name {
            STATS_FILE => {
                let mut t = Table::new(&["Users", "Items", "Interactions", "Sparsity"]);
                let field = |k: &str| doc.get(k).map(|v| v.to_string()).unwrap_or_default();
                let sparsity = doc.get("Sparsity").and_then(Value::as_f64).map(|v| format!("{v:.4}%")).unwrap_or_default();
                t.push(vec![field("Users"), field("Items"), field("Interactions"), sparsity]);
                with_run(&run, &t, &mut stats);
            }
            DIAGNOSE_JSON => {
                let labels: Labels = serde_json::from_value(doc["labels"].clone())?;
                let rows: Vec<DiagnoseAtK> = serde_json::from_value(doc["results"].clone())?;
                check_dominance(&run, &rows)?;
                let sizes: [usize; 3] = serde_json::from_value(doc["strata_sizes"].clone())?;
                with_run(&run, &single_view_table(&labels, &rows), &mut single);
                with_run(&run, &complementarity_table(&labels, &rows), &mut comp);
                if let Some(t) = fusion_table(&labels, &rows) {
                    with_run(&run, &t, &mut fusion);
                }
                with_run(&run, &strata_table(&labels, &rows, &sizes), &mut strata);
                with_run(&run, &composition_table(&labels, &rows), &mut compo);
                let mut fig = Table::new(&["K", "CompRatio(macro)", "CompRatio(micro)", "ListJaccard", "HitJaccard"]);
                for r in &rows {
                    let p = &r.pair;
                    fig.push(vec![
                        p.k.to_string(),
                        metric(&p.comp_ratio_macro),
                        metric(&p.comp_ratio_micro),
                        metric(&p.list_jaccard),
                        metric(&p.hit_jaccard),
                    ]);
                }
                with_run(&run, &fig, &mut sweep);
            }
            PROBE_JSON => {
                let csv = f.with_file_name(PROBE_CSV);
                let text = std::fs::read_to_string(&csv).map_err(|e| io_err(&csv, e))?;
                with_run(&run, &parse_csv_simple(&text), &mut probe);
            }
            _ => {}
        }
    }

    ensure_dir(&out)?;
    let mut tables = serde_json::Map::new();
    let outputs = [
        (STATS_CSV, "stats", &stats),
        (SINGLE_VIEW_CSV, "single_view", &single),
        (COMPLEMENTARITY_CSV, "complementarity", &comp),
        (FUSION_CSV, "fusion", &fusion),
        (STRATA_CSV, "strata", &strata),
        (COMPOSITION_CSV, "composition", &compo),
        (PROBE_CSV, "probe", &probe),
        (K_SWEEP_CSV, "k_sweep", &sweep),
    ];
    let mut missing = Vec::new();
    for (file, key, table) in outputs {
        match table {
            Some(t) => {
                write_text(&out.join(file), &t.to_csv())?;
                tables.insert(key.to_string(), table_json(t));
            }
            None => missing.push(key),
        }
    }
    for m in &missing {
        log::warn!("report: no {m} table (producing artifact absent)");
    }
    write_json(
        &out.join(REPORT_JSON),
        &json!({
            "dataset_hash": hashes.iter().next(),
            "sources": sources,
            "missing": missing,
            "tables": tables,
        }),
    )?;
    log::info!("report: {} artifact(s) -> {}", files.len(), out.display());
    Ok(())
}
