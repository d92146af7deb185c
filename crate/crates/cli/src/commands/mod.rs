//! Command implementations.

pub mod data;
pub mod diagnose;
pub mod probe;
pub mod report;
pub mod train;

use std::time::Instant;

use serde_json::Value;

use crate::artifacts::{config_hash, write_json, CONFIG_FILE};
use crate::cli::{Command, Common};
use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub fn run(command: &Command) -> CliResult<()> {
    let start = Instant::now();
    let name = command.name();
    match command {
        Command::Ingest(a) => data::ingest(a),
        Command::Synth(a) => data::synth(a),
        Command::TrainCf(a) => train::train(train::Kind::Cf, a),
        Command::TrainSem(a) => train::train(train::Kind::Sem, a),
        Command::TrainFusion(a) => train::train(train::Kind::Fusion, a),
        Command::Probe(a) => probe::probe(a),
        Command::Diagnose(a) => diagnose::diagnose(a),
        Command::Report(a) => report::report(a),
    }?;
    log::info!("{name}: done in {:.2?}", start.elapsed());
    Ok(())
}

/// Merges the config file, `--set` pairs and explicit flags (in rising priority).
fn settings(command: &str, common: &Common, flags: Vec<(&str, Option<String>)>) -> CliResult<Settings> {
    let mut pairs = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    Settings::resolve(common.config.as_deref(), command, pairs)
}

fn flag<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

/// Writes the resolved configuration and returns its hash.
fn record_config(dir: &std::path::Path, command: &str, resolved: Value) -> CliResult<String> {
    let doc = serde_json::json!({ "command": command, "settings": resolved });
    let hash = config_hash(&doc)?;
    let mut out = doc;
    out["config_hash"] = Value::String(hash.clone());
    write_json(&dir.join(CONFIG_FILE), &out)?;
    Ok(hash)
}

fn log_start(command: &str, seed: u64, hash: &str) {
    log::info!("{command}: seed {seed}, config {}", &hash[..12]);
}
