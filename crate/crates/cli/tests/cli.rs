//! End-to-end tests that drive the `tcr` binary the way a user would:
//! generate data, train, evaluate, predict, sweep, and ablate, checking
//! artifacts, determinism, and error behavior.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Output;

fn tcr(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_tcr"))
        .args(args)
        .output()
        .expect("spawning the tcr binary")
}

/// Runs the binary, asserting success; returns stdout.
fn ok(args: &[&str]) -> String {
    let out = tcr(args);
    assert!(
        out.status.success(),
        "tcr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs the binary, asserting a nonzero exit; returns stderr.
fn fails(args: &[&str]) -> String {
    let out = tcr(args);
    assert!(
        !out.status.success(),
        "tcr {args:?} unexpectedly succeeded:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tcr-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A complete run config sized for fast tests: 6 drugs x 8 cells, a tiny
/// model, one epoch.
fn base_config(dir: &Path) -> String {
    format!(
        r#"
[synth]
n_drugs = 6
n_cells = 8
mutation_dim = 4
expression_dim = 4
methylation_dim = 4
latent_dim = 3
noise_sd = 0.0
seed = 11

[data]
drugs = "{d}/data/drugs.jsonl"
omics = "{d}/data/omics.jsonl"
responses = "{d}/data/responses.csv"

[model]
d_model = 8
heads = 2
d_k = 4
n_blocks = 1
gcn_layer_widths = [8]
omics_hidden = []
ff_inner = 16
conv_channels = [2]
conv_kernel = 3
dropout_rate = 0.1
pool = "max"

[train]
beta = 0.9
batch_pairs = 4
epochs = 1
seed = 5

[split]
mode = "random"
k = 3
seed = 7
"#,
        d = dir.display()
    )
}

/// Writes the shared config into `dir` and generates its dataset.
fn setup(dir: &Path) -> PathBuf {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, base_config(dir)).unwrap();
    ok(&["synth", "--config", p(&cfg), "--out", p(&dir.join("data"))]);
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn csv_lines(path: &Path) -> Vec<String> {
    String::from_utf8(read(path))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn synth_is_deterministic_and_manifest_regenerates() {
    let dir = scratch("synth-det");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, base_config(&dir)).unwrap();

    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    ok(&["synth", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["synth", "--config", p(&cfg), "--out", p(&b)]);
    for name in ["drugs.jsonl", "omics.jsonl", "responses.csv"] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} differs");
    }

    // Regenerating from the manifest alone reproduces the files.
    ok(&["synth", "--config", p(&a.join("manifest.json")), "--out", p(&c)]);
    for name in ["drugs.jsonl", "omics.jsonl", "responses.csv"] {
        assert_eq!(read(&a.join(name)), read(&c.join(name)), "{name} differs");
    }

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["artifacts"].as_object().unwrap().len(), 3);
    for (_, hash) in manifest["artifacts"].as_object().unwrap() {
        assert_eq!(hash.as_str().unwrap().len(), 64);
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn synth_emits_the_full_drug_cell_cross() {
    let dir = scratch("synth-cross");
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, "[synth]\nn_drugs = 3\nn_cells = 4\nseed = 2\n").unwrap();
    ok(&["synth", "--config", p(&cfg), "--out", p(&dir.join("out"))]);

    let lines = csv_lines(&dir.join("out/responses.csv"));
    assert_eq!(lines[0], "drug_id,cell_id,ln_ic50");
    assert_eq!(lines.len(), 1 + 3 * 4);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn synth_seed_flag_overrides_config() {
    let dir = scratch("synth-seed");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, base_config(&dir)).unwrap();
    let (a, b) = (dir.join("a"), dir.join("b"));
    ok(&["synth", "--config", p(&cfg), "--out", p(&a), "--seed", "99"]);
    ok(&["synth", "--config", p(&cfg), "--out", p(&b)]);
    assert_ne!(read(&a.join("responses.csv")), read(&b.join("responses.csv")));

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 99);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn train_writes_per_fold_artifacts_and_split_plan() {
    let dir = scratch("train-artifacts");
    let cfg = setup(&dir);
    let out = dir.join("train");
    let stdout = ok(&["train", "--config", p(&cfg), "--out", p(&out), "--folds", "0"]);
    assert!(stdout.contains("fold 0:"), "{stdout}");

    assert!(out.join("fold_0/checkpoint.json").exists());
    assert!(out.join("fold_0/loss_history.csv").exists());
    assert!(out.join("split_plan.json").exists());
    assert!(!out.join("fold_1").exists(), "unselected fold was trained");

    let lines = csv_lines(&out.join("fold_0/loss_history.csv"));
    assert_eq!(lines[0], "step,total,mse,rank");
    // 32 train records / (2 * 4 pairs per batch) = 4 steps.
    assert_eq!(lines.len(), 1 + 4);

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["folds"], serde_json::json!([0]));
    assert_eq!(manifest["data_report"]["records_loaded"], 48);
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert!(artifacts.contains_key("split_plan.json"));
    assert!(artifacts.contains_key("fold_0/checkpoint.json"));
    assert!(artifacts.contains_key("fold_0/loss_history.csv"));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn train_fails_fast_when_a_data_file_is_missing() {
    let dir = scratch("train-missing");
    let cfg = setup(&dir);
    fs::remove_file(dir.join("data/omics.jsonl")).unwrap();
    let out = dir.join("train");
    let stderr = fails(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(stderr.contains("omics.jsonl"), "{stderr}");
    assert!(
        !out.join("fold_0").exists(),
        "training artifacts appeared despite the load error"
    );
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn train_rerun_from_manifest_is_bitwise_identical() {
    let dir = scratch("train-rerun");
    let cfg = setup(&dir);
    let (one, two) = (dir.join("one"), dir.join("two"));
    ok(&["train", "--config", p(&cfg), "--out", p(&one), "--folds", "1"]);
    ok(&["train", "--config", p(&one.join("manifest.json")), "--out", p(&two)]);

    for name in [
        "split_plan.json",
        "fold_1/checkpoint.json",
        "fold_1/loss_history.csv",
    ] {
        assert_eq!(read(&one.join(name)), read(&two.join(name)), "{name} differs");
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn train_reuses_an_exported_split_plan() {
    let dir = scratch("train-split");
    let cfg = setup(&dir);
    let (one, two) = (dir.join("one"), dir.join("two"));
    ok(&["train", "--config", p(&cfg), "--out", p(&one), "--folds", "0"]);
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(&two),
        "--folds",
        "0",
        "--split",
        p(&one.join("split_plan.json")),
    ]);
    assert_eq!(
        read(&one.join("split_plan.json")),
        read(&two.join("split_plan.json"))
    );
    assert_eq!(
        read(&one.join("fold_0/loss_history.csv")),
        read(&two.join("fold_0/loss_history.csv"))
    );
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn evaluate_emits_complete_reports_deterministically() {
    let dir = scratch("evaluate");
    let cfg = setup(&dir);
    let train_out = dir.join("train");
    ok(&["train", "--config", p(&cfg), "--out", p(&train_out), "--folds", "0"]);
    let ckpt = train_out.join("fold_0/checkpoint.json");

    let (e1, e2) = (dir.join("eval1"), dir.join("eval2"));
    let stdout = ok(&[
        "evaluate", "--config", p(&cfg), "--out", p(&e1), "--checkpoint", p(&ckpt),
        "--folds", "0",
    ]);
    assert!(stdout.contains("RMSE"), "{stdout}");
    ok(&[
        "evaluate", "--config", p(&cfg), "--out", p(&e2), "--checkpoint", p(&ckpt),
        "--folds", "0",
    ]);

    for name in ["report.json", "per_drug.csv", "per_cell.csv", "predictions.csv"] {
        assert!(e1.join(name).exists(), "{name} missing");
        assert_eq!(read(&e1.join(name)), read(&e2.join(name)), "{name} differs");
    }

    let report: serde_json::Value = serde_json::from_slice(&read(&e1.join("report.json"))).unwrap();
    for key in [
        "overall_pcc",
        "drug_pcc",
        "scc",
        "rmse",
        "per_drug",
        "per_cell",
        "n_drugs_skipped",
    ] {
        assert!(report.get(key).is_some(), "report.json lacks {key}");
    }
    // 48 records, 3 folds: fold 0 holds 16 test pairs.
    assert_eq!(csv_lines(&e1.join("predictions.csv")).len(), 1 + 16);

    let stderr = fails(&[
        "evaluate", "--config", p(&cfg), "--out", p(&dir.join("eval3")),
        "--checkpoint", p(&ckpt), "--folds", "0,1",
    ]);
    assert!(stderr.contains("exactly one fold"), "{stderr}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn evaluate_rejects_a_mismatched_model_section() {
    let dir = scratch("evaluate-mismatch");
    let cfg = setup(&dir);
    let train_out = dir.join("train");
    ok(&["train", "--config", p(&cfg), "--out", p(&train_out), "--folds", "0"]);

    let other = dir.join("other.toml");
    fs::write(&other, base_config(&dir).replace("ff_inner = 16", "ff_inner = 32")).unwrap();
    let stderr = fails(&[
        "evaluate",
        "--config",
        p(&other),
        "--out",
        p(&dir.join("eval")),
        "--checkpoint",
        p(&train_out.join("fold_0/checkpoint.json")),
    ]);
    assert!(stderr.contains("does not match"), "{stderr}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn predict_appends_a_predicted_column() {
    let dir = scratch("predict");
    let cfg = setup(&dir);
    let train_out = dir.join("train");
    ok(&["train", "--config", p(&cfg), "--out", p(&train_out), "--folds", "0"]);
    let ckpt = train_out.join("fold_0/checkpoint.json");

    let input = dir.join("pairs.csv");
    fs::write(
        &input,
        "drug_id,cell_id\ndrug-0000,cell-0000\ndrug-0001,cell-0003\ndrug-0005,cell-0007\n",
    )
    .unwrap();
    let out = dir.join("pred");
    ok(&[
        "predict", "--config", p(&cfg), "--out", p(&out),
        "--checkpoint", p(&ckpt), "--input", p(&input),
    ]);

    let lines = csv_lines(&out.join("predictions.csv"));
    assert_eq!(lines[0], "drug_id,cell_id,predicted");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("drug-0000,cell-0000,"));
    for line in &lines[1..] {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(value.is_finite());
    }

    // Same checkpoint, same pairs: identical bytes.
    let out2 = dir.join("pred2");
    ok(&[
        "predict", "--config", p(&cfg), "--out", p(&out2),
        "--checkpoint", p(&ckpt), "--input", p(&input),
    ]);
    assert_eq!(
        read(&out.join("predictions.csv")),
        read(&out2.join("predictions.csv"))
    );

    fs::write(&input, "drug_id,cell_id\ndrug-9999,cell-0000\n").unwrap();
    let stderr = fails(&[
        "predict", "--config", p(&cfg), "--out", p(&dir.join("pred3")),
        "--checkpoint", p(&ckpt), "--input", p(&input),
    ]);
    assert!(stderr.contains("unknown drug drug-9999"), "{stderr}");
    assert!(stderr.contains(":2:"), "{stderr}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn sweep_beta_echoes_the_grid_and_honors_the_endpoint() {
    let dir = scratch("sweep");
    let cfg = setup(&dir);
    let out = dir.join("sweep");
    ok(&[
        "sweep-beta", "--config", p(&cfg), "--out", p(&out),
        "--betas", "0.3,1.0", "--folds", "0",
    ]);

    let lines = csv_lines(&out.join("sweep.csv"));
    assert_eq!(lines[0], "beta,drug_pcc,pcc,scc,rmse");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.3,"), "{}", lines[1]);
    assert!(lines[2].starts_with("1.0,"), "{}", lines[2]);

    // At β = 1 the rank term carries zero weight, so total == mse on
    // every training step, bit for bit.
    let history = csv_lines(&out.join("point_1/loss_history.csv"));
    assert!(history.len() > 1);
    for line in &history[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], fields[2], "total != mse at β=1: {line}");
    }

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["betas"], serde_json::json!([0.3, 1.0]));

    let stderr = fails(&[
        "sweep-beta", "--config", p(&cfg), "--out", p(&dir.join("bad")),
        "--betas", "0.5,1.5",
    ]);
    assert!(stderr.contains("outside [0, 1]"), "{stderr}");
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn sweep_beta_defaults_to_the_ten_point_grid() {
    let dir = scratch("sweep-default");
    let cfg = setup(&dir);
    let out = dir.join("sweep");
    ok(&["sweep-beta", "--config", p(&cfg), "--out", p(&out), "--folds", "0"]);
    let lines = csv_lines(&out.join("sweep.csv"));
    assert_eq!(lines.len(), 11);
    let betas: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        betas,
        ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"]
    );
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn ablate_single_omics_emits_baseline_plus_three_settings() {
    let dir = scratch("ablate-single");
    let cfg = setup(&dir);
    let out = dir.join("ablate");
    ok(&[
        "ablate", "--config", p(&cfg), "--out", p(&out),
        "--mode", "single_omics", "--folds", "0",
    ]);

    let lines = csv_lines(&out.join("ablation.csv"));
    assert_eq!(lines[0], "setting,pcc,drug_pcc,scc,rmse,folds,seed");
    assert_eq!(lines.len(), 5);
    let settings: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        settings,
        ["multi_omics", "mutation_only", "expression_only", "methylation_only"]
    );
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[5], "1", "fold count column: {line}");
        assert!(fields[6].parse::<u64>().is_ok(), "seed column: {line}");
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn ablate_onehot_runs_every_fold_of_a_leave_cell_split() {
    let dir = scratch("ablate-onehot");
    let cfg_text = base_config(&dir).replace("k = 3", "k = 2");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, cfg_text).unwrap();
    ok(&["synth", "--config", p(&cfg), "--out", p(&dir.join("data"))]);

    let out = dir.join("ablate");
    let stdout = ok(&["ablate", "--config", p(&cfg), "--out", p(&out), "--mode", "onehot"]);
    assert!(stdout.contains("onehot:"), "{stdout}");

    let lines = csv_lines(&out.join("ablation.csv"));
    assert_eq!(lines[0], "setting,pcc,drug_pcc,scc,rmse,folds,seed");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("onehot,"));

    let plan: serde_json::Value =
        serde_json::from_slice(&read(&out.join("split_plan.json"))).unwrap();
    assert_eq!(plan["mode"], "leave_cell");
    assert_eq!(plan["k"], 2);
    // Every record is predicted in exactly one fold.
    assert_eq!(csv_lines(&out.join("predictions.csv")).len(), 1 + 48);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn unknown_config_keys_are_fatal() {
    let dir = scratch("badkey");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "[train]\nbetaa = 0.5\n").unwrap();
    let stderr = fails(&["train", "--config", p(&cfg), "--out", p(&dir.join("out"))]);
    assert!(stderr.contains("betaa"), "{stderr}");
    let _ = fs::remove_dir_all(&dir);
}
