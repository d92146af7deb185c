use complat_core::checkpoint::Model;
use complat_core::probe::{run_probe, ProbeArch, ProbeConfig, ProbeInputs};
use serde_json::json;

use super::{flag, log_start, record_config, settings};
use crate::artifacts::{
    check_lineage, ensure_dir, open_checkpoint, provenance, write_json, write_text, Bundle, PROBE_CSV, PROBE_JSON,
};
use crate::cli::ProbeArgs;
use crate::error::{CliError, CliResult};

fn parse_archs(raw: &str) -> CliResult<Vec<ProbeArch>> {
    let archs: Vec<ProbeArch> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| ProbeArch::parse(s).ok_or_else(|| CliError::usage(format!("unknown architecture `{}`", s.trim()))))
        .collect::<CliResult<_>>()?;
    if archs.is_empty() {
        return Err(CliError::usage("no probe architecture given"));
    }
    Ok(archs)
}

pub fn probe(a: &ProbeArgs) -> CliResult<()> {
    let mut s = settings(
        "probe",
        &a.common,
        vec![
            ("arch", a.arch.clone()),
            ("item_fraction", flag(&a.item_split)),
            ("seed", flag(&a.seed)),
            ("k", flag(&a.k)),
            ("recall_mode", a.recall_mode.clone()),
            ("alignment", a.alignment.then(|| "true".to_string())),
        ],
    )?;
    let archs = match s.take("arch") {
        Some(raw) => parse_archs(&raw)?,
        None => ProbeArch::ALL.to_vec(),
    };
    let alignment = match s.take("alignment") {
        Some(v) => v.parse::<bool>().map_err(|_| CliError::usage(format!("invalid value for `alignment`: {v}")))?,
        None => false,
    };
    let cfg: ProbeConfig = s.typed()?;
    s.finish()?;
    cfg.validate()?;

    let bundle = Bundle::open(&a.data)?;
    let (sem_model, sem_meta) = open_checkpoint(&a.sem)?;
    let (cf_model, cf_meta) = open_checkpoint(&a.cf)?;
    check_lineage(&sem_meta, &a.sem, &bundle)?;
    check_lineage(&cf_meta, &a.cf, &bundle)?;
    let Model::Sem(sem) = sem_model else {
        return Err(CliError::usage(format!("{} is a {} checkpoint, expected sem", a.sem.display(), sem_meta.kind.as_str())));
    };
    let Model::Cf(cf) = cf_model else {
        return Err(CliError::usage(format!("{} is a {} checkpoint, expected cf", a.cf.display(), cf_meta.kind.as_str())));
    };

    ensure_dir(&a.out)?;
    let tags: Vec<&str> = archs.iter().map(|x| x.tag()).collect();
    let hash = record_config(&a.out, "probe", json!({ "probe": cfg, "arch": tags, "alignment": alignment }))?;
    log_start("probe", cfg.seed, &hash);

    let sem_items = sem.item_embeddings(bundle.item_vectors()?);
    let (cf_users, cf_items) = cf.propagate(&bundle.train_graph()?)?;
    let inputs = ProbeInputs { sem: &sem_items, cf_items: &cf_items, cf_users: &cf_users, split: &bundle.split };
    let report = run_probe(&inputs, &archs, alignment, &cfg)?;
    write_text(&a.out.join(PROBE_CSV), &report.to_csv())?;
    let mut prov = provenance("probe", &hash, &bundle.hash, cfg.seed);
    prov["sem"] = json!(a.sem.display().to_string());
    prov["cf"] = json!(a.cf.display().to_string());
    write_json(&a.out.join(PROBE_JSON), &json!({ "provenance": prov, "report": report }))?;
    for r in &report.rows {
        log::info!("probe: {} [{}] R² {:.4}", r.model, r.partition.as_str(), r.r2);
    }
    Ok(())
}
