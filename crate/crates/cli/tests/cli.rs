use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn complat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_complat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_world(dir: &Path, seed: &str) {
    let o = complat(&[
        "synth", "--alpha", "0.5", "--seed", seed, "--n-users", "40", "--n-items", "30",
        "--interactions-per-user", "8", "--out", p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn train(kind: &str, data: &Path, out: &Path) {
    let o = complat(&[&format!("train-{kind}"), "--data", p(data), "--out", p(out), "--max-epochs", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&complat(&["--help"])), 0);
    assert_eq!(code(&complat(&["train-cf", "--help"])), 0);
    assert_eq!(code(&complat(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&complat(&["no-such-command"])), 1);
    assert_eq!(code(&complat(&["synth"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let o = complat(&["synth", "--out", p(dir.path()), "--set", "bogus_key=1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));
    let o = complat(&["synth", "--out", p(dir.path()), "--alpha", "1.5"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_complat"))
        .args(["synth", "--out", p(dir.path())])
        .env("COMPLAT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("COMPLAT_THREADS"));
}

#[test]
fn missing_bundle_names_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = complat(&["train-cf", "--data", p(&dir.path().join("absent")), "--out", p(&dir.path().join("m"))]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("complat ingest") || err.contains("complat synth"), "{err}");
}

#[test]
fn missing_checkpoint_names_the_train_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_world(&data, "1");
    let o = complat(&[
        "diagnose", "--data", p(&data), "--a", p(&dir.path().join("nope")), "--b", p(&dir.path().join("nope2")),
        "--out", p(&dir.path().join("d")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train-"), "{}", stderr(&o));
}

#[test]
fn ingest_without_item_vectors_then_train_sem_asks_for_them() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("inter.tsv");
    let mut text = String::new();
    for u in 0..12 {
        for i in 0..8 {
            if (u + i) % 3 != 0 {
                text.push_str(&format!("user{u}\titem{i}\n"));
            }
        }
    }
    std::fs::write(&tsv, text).unwrap();
    let data = dir.path().join("bundle");
    let o = complat(&["ingest", "--interactions", p(&tsv), "--kcore", "2", "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = read_json(&data.join("stats.json"));
    assert_eq!(stats["Users"], 12);
    assert!(stats["Sparsity"].as_f64().unwrap() > 0.0);
    let o = complat(&["train-sem", "--data", p(&data), "--out", p(&dir.path().join("sem"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--item-vectors"), "{}", stderr(&o));
}

#[test]
fn malformed_interactions_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("inter.tsv");
    std::fs::write(&tsv, "only-one-column\n").unwrap();
    let o = complat(&["ingest", "--interactions", p(&tsv), "--out", p(&dir.path().join("b"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn flags_override_set_which_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_world(&data, "2");
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# shared\nseed = 9\n[train-cf]\nmax_epochs = 4\nlr = 0.05\n").unwrap();
    let out = dir.path().join("cf");
    let o = complat(&[
        "train-cf", "--data", p(&data), "--out", p(&out), "--config", p(&cfg), "--set", "lr=0.02", "--set",
        "max_epochs=3", "--max-epochs", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = read_json(&out.join("config.json"));
    let t = &c["settings"]["train"];
    assert_eq!(t["seed"], 9);
    assert_eq!(t["max_epochs"], 2);
    assert_eq!(t["lr"], 0.02);
    let train = read_json(&out.join("train.json"));
    assert!(train["history"].as_array().unwrap().len() <= 2);
}

#[test]
fn full_pipeline_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_world(&data, "3");
    for k in ["cf", "sem", "fusion"] {
        train(k, &data, &dir.path().join(k));
    }
    let o = complat(&[
        "probe", "--data", p(&data), "--sem", p(&dir.path().join("sem")), "--cf", p(&dir.path().join("cf")),
        "--arch", "identity,linear", "--set", "max_epochs=20", "--out", p(&dir.path().join("probe")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = complat(&[
        "diagnose", "--data", p(&data), "--a", p(&dir.path().join("cf")), "--b", p(&dir.path().join("sem")),
        "--fused", p(&dir.path().join("fusion")), "--k", "5,10", "--out", p(&dir.path().join("diag")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["complementarity.csv", "fusion.csv", "strata.csv", "composition.csv", "single_view.csv", "diagnose.json"] {
        assert!(dir.path().join("diag").join(f).is_file(), "{f}");
    }
    let probe = std::fs::read_to_string(dir.path().join("probe/probe.csv")).unwrap();
    assert_eq!(probe.lines().count(), 1 + 4);

    let o = complat(&["report", "--run", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = dir.path().join("report");
    for f in [
        "stats.csv", "probe.csv", "complementarity.csv", "fusion.csv", "strata.csv", "composition.csv",
        "k_sweep.csv", "report.json",
    ] {
        assert!(report.join(f).is_file(), "{f}");
    }
    let comp = std::fs::read_to_string(report.join("complementarity.csv")).unwrap();
    assert_eq!(comp.lines().count(), 1 + 2);
}

#[test]
fn diagnose_branch_of_fusion_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_world(&data, "4");
    let fusion = dir.path().join("fusion");
    train("fusion", &data, &fusion);
    let a = format!("{}#cf", p(&fusion));
    let b = format!("{}#sem", p(&fusion));
    let o = complat(&["diagnose", "--data", p(&data), "--a", &a, "--b", &b, "--part", "val", "--out", p(&dir.path().join("d"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cf = dir.path().join("cf");
    train("cf", &data, &cf);
    let bad = format!("{}#sem", p(&cf));
    let o = complat(&["diagnose", "--data", p(&data), "--a", &bad, "--b", &b, "--out", p(&dir.path().join("e"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn checkpoint_from_another_dataset_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    tiny_world(&d1, "5");
    tiny_world(&d2, "6");
    let cf = dir.path().join("cf");
    train("cf", &d1, &cf);
    let o = complat(&["diagnose", "--data", p(&d2), "--a", p(&cf), "--b", p(&cf), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dataset"), "{}", stderr(&o));
}

#[test]
fn report_on_empty_run_is_a_notice() {
    let dir = tempfile::tempdir().unwrap();
    let o = complat(&["report", "--run", p(dir.path())]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("nothing to report"));
    assert!(!dir.path().join("report").exists());
}

#[test]
fn report_refuses_mixed_datasets() {
    let dir = tempfile::tempdir().unwrap();
    tiny_world(&dir.path().join("a"), "7");
    tiny_world(&dir.path().join("b"), "8");
    let o = complat(&["report", "--run", p(dir.path())]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn synth_alpha_grid_writes_one_bundle_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let o = complat(&[
        "synth", "--alpha", "0.2,0.6", "--n-users", "20", "--n-items", "15", "--interactions-per-user", "4", "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for a in ["alpha-0.2", "alpha-0.6"] {
        let w = read_json(&dir.path().join(a).join("world.json"));
        assert!(w.is_object());
        assert!(dir.path().join(a).join("split.json").is_file());
    }
}
