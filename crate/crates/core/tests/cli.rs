use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn small_config(out: &Path) -> Value {
    json!({
        "seed": 4,
        "task": {
            "train": { "spirals": { "n": 300, "seed": 1 } },
            "holdout": { "spirals": { "n": 100, "seed": 2 } },
            "split": { "fractions": [0.5, 0.5], "seed": 3 }
        },
        "model": {
            "network": { "layer_sizes": [2, 16, 16, 2], "seed": 5 },
            "train": { "epochs": 3 }
        },
        "mutation": { "explicit": { "sigma": 0.05, "rho": 0.5 } },
        "evolution": { "pop_size": 8, "top_k": 4 },
        "boundary": { "sigma_grid": [0.0, 0.25], "rho_grid": [0.0, 0.9], "resolution": 20 },
        "ablation": { "sigma_grid": [0.05, 0.25], "rho_grid": [0.0, 0.9], "seeds": [0, 1], "pop_size": 8 },
        "output": { "dir": out }
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn smd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smd"))
        .args(args)
        .env_remove("SMD_OUT")
        .output()
        .unwrap()
}

fn run(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    smd(&args)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let out = smd(&["train", "--config", "/nonexistent/run.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.json"));
}

#[test]
fn malformed_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("out"));
    cfg["model"]["checkpoint"] = json!("parent.smd");
    let path = write_config(dir.path(), "both.json", &cfg);
    assert_eq!(code(&run("evolve", &path, &[])), 2);

    let mut cfg = small_config(&dir.path().join("out"));
    cfg["mutation"]["search"] = json!({ "sigma_grid": [0.1], "rho_grid": [0.5] });
    let path = write_config(dir.path(), "two_mutations.json", &cfg);
    assert_eq!(code(&run("evolve", &path, &[])), 2);

    let path = write_config(dir.path(), "zero_workers.json", &small_config(&dir.path().join("out")));
    assert_eq!(code(&run("evolve", &path, &["--workers", "0"])), 2);
}

#[test]
fn shipped_external_stubs_refuse_to_run() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/external");
    for (cmd, file) in [("evolve", "imagenet.json"), ("ablate", "cifar_wide_resnet.json")] {
        let out = run(cmd, &root.join(file), &[]);
        assert_eq!(code(&out), 2);
        assert!(String::from_utf8_lossy(&out.stderr).contains("not runnable here"));
    }
}

#[test]
fn train_writes_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("run{k}"));
        let path = write_config(dir.path(), "train.json", &small_config(&out_dir));
        let out = run("train", &path, &[]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        hashes.push(std::fs::read(out_dir.join("parent.smd")).unwrap());
        let log = std::fs::read_to_string(out_dir.join("train_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 1 + 3);
        let summary: Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("train.json")).unwrap()).unwrap();
        assert!(summary["val_accuracy"].is_f64());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn training_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("out"));
    cfg["model"]["train"] = json!({ "optimizer": "sgd", "learning_rate": 1e300, "epochs": 1 });
    let path = write_config(dir.path(), "diverge.json", &cfg);
    assert_eq!(code(&run("train", &path, &[])), 3);
}

#[test]
fn search_writes_result_and_flags_out_of_band() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let mut cfg = small_config(&out_dir);
    cfg["mutation"] = json!({ "search": {
        "sigma_grid": [0.01, 0.05, 0.1, 0.2], "rho_grid": [0.0, 0.5, 0.9], "kl_target": 0.05, "samples_per_cell": 2
    }});
    let path = write_config(dir.path(), "search.json", &cfg);
    let out = run("search", &path, &[]);
    assert!(matches!(code(&out), 0 | 4));
    let result: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("search.json")).unwrap()).unwrap();
    for key in ["sigma", "rho", "in_band"] {
        assert!(result.get(key).is_some(), "missing {key}");
    }
    assert!(result["report"]["kl"].is_f64());
    assert_eq!(
        std::fs::read_to_string(out_dir.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 4 * 3
    );

    // an unreachable target still writes the closest cell, then exits 4
    cfg["mutation"]["search"]["kl_target"] = json!(50.0);
    let far = dir.path().join("far");
    cfg["output"]["dir"] = json!(far);
    let path = write_config(dir.path(), "far.json", &cfg);
    assert_eq!(code(&run("search", &path, &[])), 4);
    let result: Value = serde_json::from_str(&std::fs::read_to_string(far.join("search.json")).unwrap()).unwrap();
    assert_eq!(result["in_band"], json!(false));
}

#[test]
fn evolve_is_worker_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for workers in ["1", "8"] {
        let out_dir = dir.path().join(format!("w{workers}"));
        let path = write_config(dir.path(), "evolve.json", &small_config(&out_dir));
        let out = run("evolve", &path, &["--workers", workers, "--dump-masks"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("Acc=") && stdout.contains("eAcc=") && stdout.contains("ΔAcc="));
        reports.push(std::fs::read(out_dir.join("report.json")).unwrap());
        assert_eq!(
            std::fs::read_to_string(out_dir.join("masks.txt"))
                .unwrap()
                .lines()
                .count(),
            8
        );
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn repeats_record_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let path = write_config(dir.path(), "evolve.json", &small_config(&out_dir));
    assert_eq!(code(&run("evolve", &path, &["--repeats", "3"])), 0);
    let all: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("repeats.json")).unwrap()).unwrap();
    assert_eq!(all.len(), 3);
    let best: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(all.contains(&best));
    assert_eq!(
        std::fs::read_to_string(out_dir.join("reports.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn overlapping_splits_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dup.csv");
    let mut text = String::from("x0,x1,label\n");
    for i in 0..10 {
        text.push_str(&format!("0.5,0.5,{}\n", i % 2));
    }
    std::fs::write(&csv, text).unwrap();
    let mut cfg = small_config(&dir.path().join("out"));
    cfg["task"]["holdout"] = json!({ "csv": "dup.csv" });
    let path = write_config(dir.path(), "dup.json", &cfg);
    assert_eq!(code(&run("evolve", &path, &[])), 5);
}

#[test]
fn boundary_writes_grids_and_needs_two_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let path = write_config(dir.path(), "boundary.json", &small_config(&out_dir));
    assert_eq!(code(&run("boundary", &path, &[])), 0);
    let files: Vec<_> = std::fs::read_dir(&out_dir).unwrap().collect();
    assert_eq!(files.len(), 8);
    let pgm = std::fs::read(out_dir.join("boundary_sigma0.25_rho0.9.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5 20 20 255\n"));
    assert_eq!(pgm.len(), "P5 20 20 255\n".len() + 400);
    let csv = std::fs::read_to_string(out_dir.join("boundary_sigma0_rho0.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x,y,class,confidence");
    assert_eq!(csv.lines().count(), 401);
    // sigma 0 is the parent at every rho
    assert_eq!(
        csv,
        std::fs::read_to_string(out_dir.join("boundary_sigma0_rho0.9.csv")).unwrap()
    );

    let mut text = String::from("a,b,c,label\n");
    for i in 0..20 {
        text.push_str(&format!("{},{},{},{}\n", i, i * 2, i * 3, i % 2));
    }
    std::fs::write(dir.path().join("three.csv"), text).unwrap();
    let mut cfg = small_config(&out_dir);
    cfg["task"]["train"] = json!({ "csv": "three.csv" });
    cfg["task"]["holdout"] = json!({ "csv": "three.csv" });
    cfg["model"]["network"]["layer_sizes"] = json!([3, 8, 2]);
    let path = write_config(dir.path(), "three.json", &cfg);
    assert_eq!(code(&run("boundary", &path, &[])), 6);
}

#[test]
fn ablate_writes_the_declared_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("a{k}"));
        let path = write_config(dir.path(), "ablate.json", &small_config(&out_dir));
        assert_eq!(code(&run("ablate", &path, &[])), 0);
        outputs.push(std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let mut lines = outputs[0].lines();
    assert_eq!(lines.next().unwrap(), "sigma,rho,mode,seed,mean_kl,avg_acc,ens_acc");
    assert_eq!(lines.count(), 2 * 2 * 2 * 2);
}

#[test]
fn smd_out_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("env");
    let flag_dir = dir.path().join("flag");
    let path = write_config(dir.path(), "train.json", &small_config(&dir.path().join("cfg")));
    let out = Command::new(env!("CARGO_BIN_EXE_smd"))
        .args([
            "train",
            "--config",
            path.to_str().unwrap(),
            "--out",
            flag_dir.to_str().unwrap(),
        ])
        .env("SMD_OUT", &env_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(env_dir.join("parent.smd").exists());
    assert!(!flag_dir.exists());
    assert_eq!(code(&run("train", &path, &["--out", flag_dir.to_str().unwrap()])), 0);
    assert!(flag_dir.join("parent.smd").exists());
}

#[test]
fn checkpoint_models_feed_later_commands() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let path = write_config(dir.path(), "train.json", &small_config(&train_dir));
    assert_eq!(code(&run("train", &path, &[])), 0);
    let mut cfg = small_config(&dir.path().join("evolve"));
    cfg["model"] = json!({ "checkpoint": "train/parent.smd" });
    let path = write_config(dir.path(), "from_ckpt.json", &cfg);
    let a = run("evolve", &path, &[]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    // the trained-in-process parent and its checkpoint give the same report
    let inproc_dir = dir.path().join("inproc");
    let path = write_config(dir.path(), "inproc.json", &small_config(&inproc_dir));
    assert_eq!(code(&run("evolve", &path, &[])), 0);
    assert_eq!(
        std::fs::read(dir.path().join("evolve/report.json")).unwrap(),
        std::fs::read(inproc_dir.join("report.json")).unwrap()
    );
}
