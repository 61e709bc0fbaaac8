use std::path::Path;
use std::process::{Command, Output};

use inheritable::data::{load_labeled, save_labeled};
use inheritable::model::{load_adapted, load_model};
use inheritable::pipeline::translated_source;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inheritable"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn gen(dir: &Path, seed: &str) {
    ok(
        dir,
        &["gen-data", "--out-source", "s.csv", "--out-target", "t.csv", "--out-target-labeled", "tl.csv", "--seed", seed],
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn gen_data_writes_default_sizes_and_repeats_exactly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "3");
    gen(b.path(), "3");
    for f in ["s.csv", "t.csv", "tl.csv", "s.csv.resolved.toml"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let target = String::from_utf8(read(a.path(), "t.csv")).unwrap();
    assert_eq!(target.lines().count(), 1 + 8 * 200);
    assert!(target.lines().skip(1).all(|l| l.starts_with("-1,")));
    let source = String::from_utf8(read(a.path(), "s.csv")).unwrap();
    assert_eq!(source.lines().count(), 1 + 4 * 200);
}

#[test]
fn bad_spec_key_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.toml"), "dims = 4\nsamples_per_klass = 3\n").unwrap();
    let out = cli(
        dir.path(),
        &["gen-data", "--spec", "spec.toml", "--out-source", "s.csv", "--out-target", "t.csv"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("samples_per_klass"));
}

#[test]
fn unknown_subcommand_and_missing_flag_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(dir.path(), &["launch"])), 2);
    assert_eq!(code(&cli(dir.path(), &["adapt", "--model", "m"])), 2);
}

#[test]
fn train_vendor_writes_a_valid_model_log_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "1");
    ok(d, &["train-vendor", "--source", "s.csv", "--out-model", "v.inhm", "--epochs", "4"]);
    let model = load_model(d.join("v.inhm")).unwrap();
    assert_eq!(&read(d, "v.inhm")[..4], b"INHM");
    assert!(model.source_mean_w > 1.0 / (4.0 + 16.0));
    let log = String::from_utf8(read(d, "v.inhm.log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("phase,epoch,loss,source_accuracy,mean_source_w"));
    assert_eq!(log.lines().count(), 1 + 4 + 4);
    let snap = String::from_utf8(read(d, "v.inhm.resolved.toml")).unwrap();
    assert!(snap.contains("pretrain_epochs = 4"));
}

#[test]
fn zero_epochs_gives_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "1");
    ok(d, &["train-vendor", "--source", "s.csv", "--out-model", "a.inhm", "--epochs", "0"]);
    ok(
        d,
        &["train-vendor", "--source", "s.csv", "--out-model", "b.inhm", "--epochs", "0", "--learning-rate", "0.5"],
    );
    load_model(d.join("a.inhm")).unwrap();
    assert_eq!(read(d, "a.inhm"), read(d, "b.inhm"));
}

#[test]
fn flags_override_config_and_snapshot_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "2");
    std::fs::write(d.join("vendor.toml"), "pretrain_epochs = 9\nfinetune_epochs = 9\nseed = 4\n").unwrap();
    ok(
        d,
        &["train-vendor", "--source", "s.csv", "--config", "vendor.toml", "--out-model", "a.inhm", "--epochs", "2"],
    );
    let snap = String::from_utf8(read(d, "a.inhm.resolved.toml")).unwrap();
    assert!(snap.contains("pretrain_epochs = 2") && snap.contains("seed = 4"));
    ok(
        d,
        &["train-vendor", "--source", "s.csv", "--config", "a.inhm.resolved.toml", "--out-model", "b.inhm"],
    );
    assert_eq!(read(d, "a.inhm"), read(d, "b.inhm"));
}

#[test]
fn missing_source_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["train-vendor", "--source", "absent.csv", "--out-model", "v.inhm"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn inheritability_of_the_source_itself_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "5");
    ok(d, &["train-vendor", "--source", "s.csv", "--out-model", "v.inhm", "--epochs", "5"]);
    let out = ok(d, &["inheritability", "--model", "v.inhm", "--target", "s.csv"]);
    let line = out.lines().nth(1).unwrap();
    let score: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    assert!((score - 1.0).abs() < 1e-9, "{line}");
    assert!(out.contains("model,lo,hi,count"));
}

#[test]
fn shifted_vendor_ranks_below_unshifted() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.toml"), "[transform]\nrotation_deg = 0.0\n").unwrap();
    ok(d, &["gen-data", "--spec", "spec.toml", "--out-source", "s.csv", "--out-target", "t.csv"]);
    let shifted = translated_source(&load_labeled(d.join("s.csv")).unwrap(), 3.0);
    save_labeled(&shifted, d.join("far.csv")).unwrap();
    ok(d, &["train-vendor", "--source", "s.csv", "--out-model", "near.inhm"]);
    ok(d, &["train-vendor", "--source", "far.csv", "--out-model", "far.inhm"]);
    let out = ok(d, &["inheritability", "--model", "far.inhm", "--model", "near.inhm", "--target", "t.csv"]);
    assert!(out.lines().nth(1).unwrap().starts_with("1,near.inhm,"), "{out}");
}

#[test]
fn empty_target_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "1");
    ok(d, &["train-vendor", "--source", "s.csv", "--out-model", "v.inhm", "--epochs", "1"]);
    std::fs::write(d.join("empty.csv"), "label,f0\n").unwrap();
    let out = cli(d, &["inheritability", "--model", "v.inhm", "--target", "empty.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn adapt_and_evaluate_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "6");
    ok(d, &["train-vendor", "--source", "s.csv", "--out-model", "v.inhm", "--epochs", "5"]);
    ok(
        d,
        &["adapt", "--model", "v.inhm", "--target", "t.csv", "--out-model", "a.inht", "--epochs", "2"],
    );
    assert_eq!(&read(d, "a.inht")[..4], b"INHT");
    load_adapted(d.join("a.inht")).unwrap();
    let log = String::from_utf8(read(d, "a.inht.log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,l_inh,l_t1,l_t2,os"));
    assert_eq!(log.lines().count(), 3);
    assert!(d.join("a.inht.resolved.toml").exists());

    let shown = ok(
        d,
        &["evaluate", "--model", "a.inht", "--target-with-labels", "tl.csv", "--source", "s.csv", "--out-dir", "ev"],
    );
    assert!(shown.contains("OS*"));
    let report: serde_json::Value = serde_json::from_slice(&read(d, "ev/report.json")).unwrap();
    assert!(report["os"].as_f64().unwrap() > 0.0);
    assert!(report["pad_shared"].as_f64().is_some());
    assert_eq!(report["openness"].as_f64(), Some(0.5));
    let curves = String::from_utf8(read(d, "ev/precision.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("curve,percentile,count,precision"));

    let wrong_kind = cli(d, &["adapt", "--model", "a.inht", "--target", "t.csv", "--out-model", "x.inht"]);
    assert_eq!(code(&wrong_kind), 2);
}

#[test]
fn sweep_writes_one_row_per_value_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "[data]\nsamples_per_class = 40\n[vendor]\npretrain_epochs = 3\nfinetune_epochs = 3\n[adapt]\nepochs = 2\n",
    )
    .unwrap();
    ok(
        d,
        &["sweep", "--config", "run.toml", "--param", "pseudo", "--values", "10,20", "--seeds", "2", "--out", "sweep.csv"],
    );
    let csv = String::from_utf8(read(d, "sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("k,")));
    assert!(d.join("sweep.csv.resolved.toml").exists());
}
