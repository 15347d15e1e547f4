use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use assert_cmd::Command;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn dlsm() -> Command {
    Command::cargo_bin("dlsm").unwrap()
}

fn stdout_json(out: &std::process::Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn train_small(out: &Path, seed: u64) {
    dlsm()
        .arg("train")
        .arg(fixture("blocks.txt"))
        .arg("--config")
        .arg(fixture("small.cfg"))
        .args(["--seed", &seed.to_string(), "--out"])
        .arg(out)
        .assert()
        .success();
}

#[test]
fn stats_of_a_three_cycle() {
    let out = dlsm().arg("stats").arg(fixture("cycle3.txt")).output().unwrap();
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["ED"], 0.5);
    assert_eq!(v["RR"], 0.0);
    assert_eq!(v["|V|"], 3);
}

#[test]
fn empty_graph_is_a_data_error() {
    let out = dlsm().arg("stats").arg(fixture("empty.txt")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("empty.txt") && err.contains("no edges"), "{err}");
}

#[test]
fn missing_file_names_the_path() {
    let out = dlsm().args(["stats", "/nonexistent/graph.txt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/graph.txt"));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlsm().arg("train").arg(fixture("blocks.txt")).args(["--learning_rat", "0.1", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--learning_rat"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 3\nlearning_rat = 0.1\n").unwrap();
    let out = dlsm().arg("train").arg(fixture("blocks.txt")).arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn bad_config_value_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlsm().arg("train").arg(fixture("blocks.txt")).args(["--decoder_sizes", "8,4", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_the_run_layout_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let t = Instant::now();
    train_small(&run, 1);
    assert!(t.elapsed().as_secs() < 60);
    for f in ["manifest.json", "checkpoint", "history.csv", "split.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,kl_z,kl_s,kl_gamma,kl_delta,recon,total,val_auc");

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let rec = &manifest["commands"][0];
    assert_eq!(rec["command"], "train");
    assert_eq!(rec["config"]["epochs"], "30");
    assert_eq!(rec["config"]["seed"], "1");
    for f in ["checkpoint", "history.csv", "split.json"] {
        assert!(rec["outputs"][f].is_string(), "{f}");
    }
    assert!(rec["inputs"][fixture("blocks.txt").display().to_string()].is_string());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = dlsm()
        .arg("train")
        .arg(fixture("blocks.txt"))
        .arg("--config")
        .arg(fixture("small.cfg"))
        .args(["--epochs", "4", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["epochs_run"], 4);
}

#[test]
fn evaluation_tasks_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_small(&run, 2);
    let ckpt = run.join("checkpoint");

    let out = dlsm().arg("eval").arg(&ckpt).args(["--task", "lp"]).output().unwrap();
    assert!(out.status.success());
    let lp = stdout_json(&out);
    assert!(lp["auc"].as_f64().unwrap() > 0.5);
    assert!(run.join("eval/lp.json").exists());

    let out = dlsm().arg("eval").arg(&ckpt).args(["--task", "cd"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--truth"));

    let out = dlsm().arg("eval").arg(&ckpt).args(["--task", "cd", "--truth"]).arg(fixture("blocks_truth.txt")).output().unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["k"], 2);

    let emb = dir.path().join("emb.csv");
    dlsm().arg("eval").arg(&ckpt).args(["--task", "factors", "--embeddings"]).arg(&emb).assert().success();
    let plots: Vec<_> = fs::read_dir(run.join("plots")).unwrap().collect();
    assert_eq!(plots.len(), 8);
    assert_eq!(fs::read_to_string(&emb).unwrap().lines().count(), 41);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let cmds: Vec<_> = manifest["commands"].as_array().unwrap().iter().map(|c| c["command"].as_str().unwrap().to_string()).collect();
    assert_eq!(cmds, ["train", "eval", "eval", "eval"]);
    assert!(manifest["commands"][3]["outputs"]["plots/ccd_gamma.csv"].is_string());
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_small(&run, 3);
    let ckpt = run.join("checkpoint");
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let out = dlsm().arg("eval").arg(&ckpt).args(["--task", "lp"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn config_mismatch_warns() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_small(&run, 4);
    let other = dir.path().join("other.cfg");
    fs::write(&other, "epochs = 31\n").unwrap();
    let out = dlsm().arg("eval").arg(run.join("checkpoint")).args(["--task", "lp", "--config"]).arg(&other).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn rerun_from_manifest_reproduces_every_digest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_small(&a, 5);
    dlsm().arg("eval").arg(a.join("checkpoint")).args(["--task", "lp"]).assert().success();
    dlsm().arg("rerun").arg(a.join("manifest.json")).arg("--out").arg(&b).assert().success();
    for f in ["checkpoint", "split.json", "history.csv", "eval/lp.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn repro_tabulates_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("repro");
    let repro = |seeds: &str| {
        dlsm()
            .arg("-v")
            .arg("repro")
            .arg(fixture("blocks.txt"))
            .arg("--config")
            .arg(fixture("small.cfg"))
            .args(["--epochs", "10", "--seeds", seeds, "--methods", "distance", "--name", "blocks", "--truth"])
            .arg(fixture("blocks_truth.txt"))
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap()
    };
    let first = repro("1");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let table = fs::read_to_string(out_dir.join("table.csv")).unwrap();
    assert!(table.starts_with("method,metric,blocks"));
    for metric in ["AUC", "AP", "ACC"] {
        let row = table.lines().find(|l| l.starts_with(&format!("DLSM,{metric},"))).unwrap();
        assert!(row.ends_with("±0.000"), "{row}");
    }
    let ckpt = out_dir.join("distance/seed-1/checkpoint");
    let before = fs::read(&ckpt).unwrap();

    let second = repro("2");
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("seed 1: reusing"));
    assert_eq!(fs::read(&ckpt).unwrap(), before);
    let runs = fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["runs"], 2);
}

#[test]
fn unknown_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dlsm().arg("repro").arg(fixture("blocks.txt")).args(["--methods", "cosine", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
