use std::path::Path;
use std::process::{Command, Output};

fn fsdh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsdh"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn err(out: &Output) -> String {
    assert!(!out.status.success(), "expected failure");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: [&str; 8] = [
    "--set",
    "synth_per_class=100",
    "--set",
    "synth_test_per_class=10",
    "--set",
    "anchors=150",
    "--set",
    "synth_spread=0.6",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL).collect()
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in\n{text}"))
        .parse()
        .unwrap()
}

#[test]
fn csv_round_trip_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&fsdh(d, &with_small(&["synth", "-o", "data"])));
    let csv = [
        "--source", "csv",
        "--set", "train_images=data/train_features.csv",
        "--set", "train_labels=data/train_labels.csv",
        "--set", "test_images=data/test_features.csv",
        "--set", "test_labels=data/test_labels.csv",
        "--set", "anchors=150",
    ];
    let mut train = vec!["train", "-o", "run"];
    train.extend(csv);
    let stdout = ok(&fsdh(d, &train));
    assert!(stdout.contains("learning time"));
    for f in ["model.fsdh", "config.txt", "train_log.txt"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }

    let mut eval = vec!["eval", "--model", "run/model.fsdh", "-o", "e1", "--set", "per_query=true"];
    eval.extend(csv);
    ok(&fsdh(d, &eval));
    let summary = std::fs::read_to_string(d.join("e1/summary.txt")).unwrap();
    assert!(summary_value(&summary, "precision_at_radius") > 0.95, "{summary}");
    assert!(summary_value(&summary, "map") > 0.95, "{summary}");
    assert_eq!(summary_value(&summary, "queries"), 100.0);
    assert!(d.join("e1/pr_curve.csv").exists());
    assert!(d.join("e1/per_query.csv").exists());

    eval[4] = "e2";
    ok(&fsdh(d, &eval));
    let again = std::fs::read_to_string(d.join("e2/summary.txt")).unwrap();
    assert_eq!(summary, again);
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "# small run\nbits = 64\nanchors = 100\nsynth_per_class = 50\nsynth_test_per_class = 5\n").unwrap();
    ok(&fsdh(d, &["train", "-c", "run.cfg", "--set", "anchors=80", "-o", "out"]));
    let saved = std::fs::read_to_string(d.join("out/config.txt")).unwrap();
    assert!(saved.contains("bits = 64"));
    assert!(saved.contains("anchors = 80"));
    let log = std::fs::read_to_string(d.join("out/train_log.txt")).unwrap();
    assert!(log.contains("anchors=80"));
}

#[test]
fn non_power_of_two_only_blocks_fsdh() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let msg = err(&fsdh(d, &with_small(&["train", "--bits", "24", "-o", "f"])));
    assert!(msg.contains("A1") && msg.contains("power of 2"), "{msg}");
    ok(&fsdh(d, &with_small(&["train", "--bits", "24", "--method", "sdh", "--set", "iters=2", "-o", "s"])));
    assert!(d.join("s/trajectory.csv").exists());
    assert!(d.join("s/model.fsdh").exists());
}

#[test]
fn missing_dataset_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let msg = err(&fsdh(
        dir.path(),
        &["train", "--source", "mnist", "--set", "train_images=nope/img", "--set", "train_labels=nope/lab"],
    ));
    assert!(msg.contains("dataset stage") && msg.contains("no such file"), "{msg}");
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&fsdh(d, &with_small(&["train", "-o", "m"])));
    let msg = err(&fsdh(d, &with_small(&["eval", "--model", "m/model.fsdh", "--set", "synth_dim=16", "-o", "e"])));
    assert!(msg.contains("dimension mismatch"), "{msg}");
}

#[test]
fn eval_rejects_corrupt_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.fsdh"), b"not a model").unwrap();
    let msg = err(&fsdh(d, &["eval", "--model", "bad.fsdh"]));
    assert!(msg.contains("model stage"), "{msg}");
}

#[test]
fn unknown_setting_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let msg = err(&fsdh(dir.path(), &["train", "--set", "colour=red"]));
    assert!(msg.contains("config stage") && msg.contains("unknown setting"), "{msg}");
}

#[test]
fn fig1_writes_every_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&fsdh(d, &["figures", "fig1", "-o", "f"]));
    let csvs = std::fs::read_dir(d.join("f"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".csv"))
        .count();
    assert_eq!(csvs, 20);
    let reference = std::fs::read_to_string(d.join("f/fig1_reference.txt")).unwrap();
    let closed = summary_value(&reference, "fsdh_objective");
    assert!((closed - 10.0 / 17.0).abs() < 1e-9, "{reference}");
    assert!(summary_value(&reference, "exhaustive_final_min") >= closed - 1e-9);
}

#[test]
fn losses_and_biasmap_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = ["--set", "synth_per_class=30", "--set", "synth_test_per_class=2", "--set", "anchors=60", "--set", "iters=2"];
    let mut args = vec!["figures", "losses", "-o", "l", "--set", "bits_list=16,32"];
    args.extend(small);
    ok(&fsdh(d, &args));
    let table = std::fs::read_to_string(d.join("l/losses.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");

    let mut args = vec!["figures", "biasmap", "-o", "b", "--bits", "16"];
    args.extend(small);
    ok(&fsdh(d, &args));
    for f in ["k_matrix.csv", "btb_fsdh.csv", "btb_sdh.csv", "order.csv", "biasmap.txt"] {
        assert!(d.join("b").join(f).exists(), "{f}");
    }
    let grid = std::fs::read_to_string(d.join("b/k_matrix.csv")).unwrap();
    assert_eq!(grid.lines().count(), 300);
}

#[test]
fn bench_reports_stage_medians() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = vec!["bench", "-o", "b", "--set", "bits_list=32,64", "--set", "repeats=1", "--set", "iters=1"];
    args.extend(with_small(&[]));
    ok(&fsdh(d, &args));
    let csv = std::fs::read_to_string(d.join("b/bench.csv")).unwrap();
    assert!(csv.contains("fsdh,150,64,linear_solve"));
    assert!(csv.contains("sdh,150,32,alternating_optimization"));
    assert_eq!(csv.lines().count(), 1 + 2 * 7);
}

#[test]
fn defaults_lists_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&fsdh(dir.path(), &["defaults"]));
    assert!(text.contains("bits = 32"));
    assert!(text.contains("zero_retrieval = zero"));
}
