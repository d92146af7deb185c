use complat_core::cf::train_cf;
use complat_core::checkpoint::{save_checkpoint, Model};
use complat_core::fusion::train_fusion;
use complat_core::semantic::train_sem;
use complat_core::train::{EvalRecord, TrainConfig, TrainOutcome};
use serde_json::json;

use super::{flag, log_start, record_config, settings};
use crate::artifacts::{ensure_dir, provenance, write_json, Bundle, TRAIN_FILE};
use crate::cli::TrainArgs;
use crate::error::CliResult;

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Cf,
    Sem,
    Fusion,
}

impl Kind {
    fn command(self) -> &'static str {
        match self {
            Kind::Cf => "train-cf",
            Kind::Sem => "train-sem",
            Kind::Fusion => "train-fusion",
        }
    }
}

struct Summary {
    model: Model,
    best_metric: f64,
    best_epoch: usize,
    epochs_run: usize,
    history: Vec<EvalRecord>,
}

fn summarize<M>(o: TrainOutcome<M>, wrap: fn(M) -> Model) -> Summary {
    Summary {
        model: wrap(o.model),
        best_metric: o.best_metric,
        best_epoch: o.best_epoch,
        epochs_run: o.epochs_run,
        history: o.history,
    }
}

pub fn train(kind: Kind, a: &TrainArgs) -> CliResult<()> {
    let command = kind.command();
    let mut s = settings(
        command,
        &a.common,
        vec![
            ("seed", flag(&a.seed)),
            ("lr", flag(&a.lr)),
            ("batch_size", flag(&a.batch_size)),
            ("max_epochs", flag(&a.max_epochs)),
            ("dim", flag(&a.dim)),
        ],
    )?;
    let cfg: TrainConfig = s.typed()?;
    s.finish()?;
    cfg.validate()?;
    let bundle = Bundle::open(&a.data)?;
    ensure_dir(&a.out)?;
    let hash = record_config(&a.out, command, json!({ "train": cfg }))?;
    log_start(command, cfg.seed, &hash);

    let split = &bundle.split;
    let out = match kind {
        Kind::Cf => summarize(train_cf(split, &cfg)?, Model::Cf),
        Kind::Sem => summarize(train_sem(split, bundle.item_vectors()?, &cfg)?, Model::Sem),
        Kind::Fusion => summarize(train_fusion(split, bundle.item_vectors()?, &cfg)?, Model::Fusion),
    };
    let mut prov = provenance(command, &hash, &bundle.hash, cfg.seed);
    prov["best_epoch"] = json!(out.best_epoch);
    prov["best_val_recall"] = json!(out.best_metric);
    prov["epochs_run"] = json!(out.epochs_run);
    save_checkpoint(&a.out, &out.model, prov.clone())?;
    write_json(&a.out.join(TRAIN_FILE), &json!({ "provenance": prov, "history": out.history }))?;
    log::info!(
        "{command}: best val recall@{} {:.4} at epoch {} of {}",
        cfg.eval_k,
        out.best_metric,
        out.best_epoch,
        out.epochs_run
    );
    Ok(())
}
