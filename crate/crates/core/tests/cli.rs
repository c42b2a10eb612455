mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vcache_core::coreset::SelectionManifest;
use vcache_core::flowsim::MlpField;
use vcache_core::ingest;

fn vcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vcache(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_file(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn synth_writes_library_bytes_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let out = ok(&["--seed", "7", "synth", "--n", "100", "--dim", "8", "--clusters", "4", "--out", s(&a)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("n=100 d=8"));
    ok(&["--seed", "7", "synth", "--n", "100", "--dim", "8", "--clusters", "4", "--out", s(&b)]);
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let mut expected = Vec::new();
    ingest::write_jsonl(&ingest::synth_dataset(7, 100, 8, 4, 0.5).unwrap(), &mut expected).unwrap();
    assert_eq!(bytes, expected);
    assert!(dir.path().join("a.config.json").exists());
}

#[test]
fn invalid_arguments_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    assert_eq!(vcache(&["synth", "--n", "0", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(vcache(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(vcache(&["bench-cache", "--field", "nope"]).status.code(), Some(2));
}

#[test]
fn missing_file_exits_one_and_missing_losses_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let o = dir.path().join("o");
    assert_eq!(vcache(&["select", "--data", s(&missing), "--out", s(&o)]).status.code(), Some(1));

    let nolosses = dir.path().join("nl.jsonl");
    fs::write(&nolosses, "{\"id\":\"a\",\"embedding\":[0]}\n{\"id\":\"b\",\"embedding\":[1]}\n").unwrap();
    let code = vcache(&["select", "--data", s(&nolosses), "--budget", "1", "--k", "1", "--out", s(&o)]).status.code();
    assert_eq!(code, Some(3));
}

#[test]
fn select_budget_and_gamma_r_zero_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    ok(&["--seed", "3", "synth", "--n", "100", "--dim", "4", "--clusters", "5", "--out", s(&data)]);
    let out = dir.path().join("sel");
    ok(&["--seed", "1", "select", "--data", s(&data), "--budget", "10%", "--gamma-r", "0", "--baseline", "random", "--out", s(&out)]);
    let m: SelectionManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.picks.len(), 10);
    let base: SelectionManifest =
        serde_json::from_str(&fs::read_to_string(out.join("baseline_manifest.json")).unwrap()).unwrap();
    assert_eq!(base.picks.len(), 10);
    assert_eq!(base.method, "random");

    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,id,x,x_prime,picked_rank"));
    let xp: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(xp.len(), 100);
    let expected: Vec<usize> = common::descending_order(&xp).into_iter().take(10).collect();
    assert_eq!(m.indices(), expected);
    assert!(out.join("config.json").exists());
}

#[test]
fn select_small_dataset_matches_literal_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    ok(&["--seed", "9", "synth", "--n", "20", "--dim", "3", "--clusters", "3", "--spread", "1.0", "--out", s(&data)]);
    let out = dir.path().join("sel");
    ok(&["--seed", "4", "select", "--data", s(&data), "--budget", "6", "--out", s(&out)]);
    let m: SelectionManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();

    let ds = ingest::load_jsonl(&data).unwrap();
    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    let x: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    let pts = common::embeddings(&ds);
    let xp = common::dense_forward(&common::dense_adjacency(&pts, 5, 0.1), &x);
    assert_eq!(m.indices(), common::literal_select(&pts, &xp, 6, 0.1));
}

#[test]
fn select_accepts_matrix_input() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ingest::synth_dataset(2, 30, 3, 2, 1.0).unwrap();
    let recs: Vec<_> = ds
        .into_records()
        .into_iter()
        .map(|mut r| {
            r.step_losses = None;
            r
        })
        .collect();
    let ds = ingest::Dataset::new(recs, 3).unwrap();
    let bin = dir.path().join("m.vcem");
    ingest::save_matrix(&ds, &bin).unwrap();
    // matrix files carry no losses
    let out = dir.path().join("sel");
    assert_eq!(vcache(&["select", "--data", s(&bin), "--out", s(&out)]).status.code(), Some(3));
}

#[test]
fn bench_alpha_one_reports_no_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    ok(&["bench-cache", "--alpha", "1", "--samples", "32", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["reuse_fraction"]["max"], 0.0);
    assert_eq!(v["endpoint_deviation"]["max_rel"], 0.0);
    assert!(v.get("timing").is_none());
    for f in ["smoothness.csv", "smoothness_full.csv", "deviations.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let dev = fs::read_to_string(out.join("deviations.csv")).unwrap();
    assert_eq!(dev.lines().count(), 33);
    assert!(fs::read_to_string(out.join("smoothness.csv")).unwrap().starts_with("step,delta\n"));
}

#[test]
fn bench_defaults_on_bundled_field_reuse_at_least_55_percent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    ok(&["bench-cache", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let reuse = v["reuse_fraction"]["mean"].as_f64().unwrap();
    assert!(reuse >= 0.55, "{reuse}");
}

#[test]
fn bench_on_field_files_and_nonfinite_exit() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("g.json");
    fs::write(&field, r#"{"components":[{"weight":1,"mean":[1.0,-1.0],"sigma":0.5}]}"#).unwrap();
    let out = dir.path().join("b");
    ok(&["bench-cache", "--field", &format!("gmm:{}", s(&field)), "--samples", "8", "--out", s(&out)]);

    // saturated hidden units times huge output weights overflow to infinity
    let mut v = MlpField::init(2, 4, 0).unwrap().to_json();
    for b in v["biases"][1].as_array_mut().unwrap() {
        *b = serde_json::json!(100.0);
    }
    for row in v["weights"][2].as_array_mut().unwrap() {
        for w in row.as_array_mut().unwrap() {
            *w = serde_json::json!(1e308);
        }
    }
    let mlp = dir.path().join("m.json");
    fs::write(&mlp, v.to_string()).unwrap();
    let code = vcache(&["bench-cache", "--field", &format!("mlp:{}", s(&mlp)), "--samples", "4", "--out", s(&out)])
        .status
        .code();
    assert_eq!(code, Some(4));
}

#[test]
fn train_flow_epochs_zero_is_init_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let moons = data_file("moons.jsonl");
    let a = dir.path().join("a");
    ok(&["--seed", "5", "train-flow", "--points", &moons, "--epochs", "0", "--hidden", "8", "--out", s(&a)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("model.json")).unwrap()).unwrap();
    assert_eq!(MlpField::from_json(&v).unwrap(), MlpField::init(2, 8, 5).unwrap());

    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for d in [&b, &c] {
        ok(&["--seed", "5", "train-flow", "--points", &moons, "--epochs", "3", "--hidden", "8", "--out", s(d)]);
    }
    assert_eq!(fs::read(b.join("model.json")).unwrap(), fs::read(c.join("model.json")).unwrap());
    assert_eq!(fs::read(b.join("loss.csv")).unwrap(), fs::read(c.join("loss.csv")).unwrap());

    // exploding learning rate
    let d = dir.path().join("d");
    let code = vcache(&["train-flow", "--points", &moons, "--epochs", "50", "--lr", "1e6", "--out", s(&d)]).status.code();
    assert_eq!(code, Some(5));
}

#[test]
fn train_flow_loss_decreases_over_five_epoch_windows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    ok(&["train-flow", "--points", &data_file("moons.jsonl"), "--epochs", "25", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    let loss: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(loss.len(), 25);
    let blocks: Vec<f64> = loss.chunks(5).map(|c| c.iter().sum::<f64>() / 5.0).collect();
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "{blocks:?}");
    }
}

#[test]
fn report_sorts_by_budget_and_rejects_empty_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    ok(&["synth", "--n", "60", "--dim", "3", "--out", s(&data)]);
    let runs = dir.path().join("runs");
    for (name, budget) in [("r_a", "50%"), ("r_b", "10%"), ("r_c", "30%")] {
        ok(&["select", "--data", s(&data), "--budget", budget, "--out", s(&runs.join(name))]);
    }
    ok(&["bench-cache", "--samples", "16", "--out", s(&runs.join("bench"))]);
    let out = ok(&["report", "--in-dir", s(&runs)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(fs::read_to_string(runs.join("summary.md")).unwrap(), text);
    let pos = |needle: &str| text.find(needle).unwrap_or_else(|| panic!("{needle} missing"));
    assert!(pos("r_b/manifest.json") < pos("r_c/manifest.json"));
    assert!(pos("r_c/manifest.json") < pos("r_a/manifest.json"));
    let bench: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(runs.join("bench/report.json")).unwrap()).unwrap();
    let reuse = format!("{:.4}", bench["reuse_fraction"]["mean"].as_f64().unwrap());
    assert!(text.contains(&reuse));

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(vcache(&["report", "--in-dir", s(empty.path())]).status.code(), Some(2));
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&["--seed", "11", "bench-cache", "--samples", "16", "--alpha", "4", "--out", s(&a)]);
    let b = dir.path().join("b");
    ok(&["--out-dir", s(&b), "replay", "--config", s(&a.join("config.json"))]);
    for f in ["report.json", "smoothness.csv", "deviations.csv", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let data = dir.path().join("d.jsonl");
    ok(&["--seed", "2", "synth", "--n", "40", "--dim", "2", "--out", s(&data)]);
    let c = dir.path().join("c");
    ok(&["--seed", "6", "select", "--data", s(&data), "--budget", "5", "--out", s(&c)]);
    let d = dir.path().join("d");
    ok(&["--out-dir", s(&d), "replay", "--config", s(&c.join("config.json"))]);
    assert_eq!(fs::read(c.join("manifest.json")).unwrap(), fs::read(d.join("manifest.json")).unwrap());
}
