//! End-to-end CLI checks driving `run` the way the binary does.

use std::fs;
use std::path::{Path, PathBuf};

use amd_mil::error::Error;

fn run(args: &[&str]) -> amd_mil::Result<()> {
    let argv = std::iter::once("amdmil".to_string()).chain(args.iter().map(|s| s.to_string()));
    amd_mil_cli::run(argv)
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("amdmil_cli_{tag}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn generate_small(dir: &Path) {
    run(&[
        "generate",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "7",
        "--num-bags",
        "24",
        "--dim",
        "8",
        "--n-min",
        "4",
        "--n-max",
        "9",
    ])
    .unwrap();
}

#[test]
fn generate_is_byte_deterministic() {
    let a = workdir("gen_a");
    let b = workdir("gen_b");
    generate_small(&a);
    generate_small(&b);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn train_eval_attention_round_trip() {
    let data = workdir("trip_data");
    generate_small(&data);
    let manifest = data.join("manifest.json");
    let out = workdir("trip_run");
    run(&[
        "train",
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--folds",
        "3",
        "--n-agents",
        "2",
        "--landmarks",
        "2",
        "--cnn-groups",
        "2",
    ])
    .unwrap();
    for file in [
        "config.json",
        "run.json",
        "losses.csv",
        "fold0.amdc",
        "folds.json",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    run(&[
        "eval",
        "--data",
        manifest.to_str().unwrap(),
        "--checkpoint",
        out.join("fold0.amdc").to_str().unwrap(),
        "--config",
        out.join("config.json").to_str().unwrap(),
    ])
    .unwrap();
    let att = out.join("att.csv");
    run(&[
        "attention",
        "--data",
        manifest.to_str().unwrap(),
        "--checkpoint",
        out.join("fold0.amdc").to_str().unwrap(),
        "--config",
        out.join("config.json").to_str().unwrap(),
        "--bag",
        "bag0001",
        "--out",
        att.to_str().unwrap(),
    ])
    .unwrap();
    let text = fs::read_to_string(&att).unwrap();
    assert!(text.starts_with("instance_index,attention_score,instance_label"));
    assert!(text.trim().lines().count() > 1);
}

#[test]
fn ablate_emits_the_five_row_table() {
    let data = workdir("abl_data");
    generate_small(&data);
    let out = workdir("abl_run");
    run(&[
        "ablate",
        "--data",
        data.join("manifest.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "1",
        "--folds",
        "3",
        "--n-agents",
        "2",
        "--landmarks",
        "2",
        "--cnn-groups",
        "2",
        "--jobs",
        "3",
    ])
    .unwrap();
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("variant,agent,trainable,mask,denoise"));
    assert!(lines[1].starts_with("nystrom"));
    assert!(lines[5].starts_with("amd,1,1,1,1"));
}

#[test]
fn sweep_emits_one_row_per_count() {
    let data = workdir("sweep_data");
    generate_small(&data);
    let out = workdir("sweep_run");
    run(&[
        "sweep",
        "--data",
        data.join("manifest.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--counts",
        "2,3",
        "--epochs",
        "1",
        "--folds",
        "3",
        "--landmarks",
        "2",
        "--cnn-groups",
        "2",
    ])
    .unwrap();
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "n,acc,auc");
    assert!(lines[1].starts_with("2,"));
    assert!(lines[2].starts_with("3,"));
}

#[test]
fn gradcheck_passes_at_spec_dimensions() {
    run(&[
        "gradcheck",
        "--variant",
        "amd",
        "-N",
        "7",
        "-D",
        "8",
        "-n",
        "4",
        "-m",
        "4",
    ])
    .unwrap();
}

#[test]
fn config_file_merges_with_flag_overrides() {
    let data = workdir("cfgmerge_data");
    generate_small(&data);
    let cfg_path = data.join("train.json");
    fs::write(
        &cfg_path,
        r#"{"epochs": 1, "folds": 3, "n_agents": 2, "landmarks": 2, "cnn_groups": 2, "aggregator": "dense"}"#,
    )
    .unwrap();
    let out = workdir("cfgmerge_run");
    run(&[
        "train",
        "--data",
        data.join("manifest.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
        "--aggregator",
        "trainable-agent",
    ])
    .unwrap();
    let echoed: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["aggregator"], "trainable-agent"); // flag beats file
    assert_eq!(echoed["epochs"], 1); // file value kept
}

#[test]
fn errors_map_to_the_documented_exit_codes() {
    let unknown_flag = run(&["train", "--bogus"]);
    assert_eq!(unknown_flag.unwrap_err().exit_code(), 1);
    let missing_data = run(&[
        "train",
        "--data",
        "/nope/m.json",
        "--out",
        "/tmp/amdmil_cli_x",
    ]);
    assert_eq!(missing_data.unwrap_err().exit_code(), 1);
    let numeric = Error::Numeric("x".into());
    assert_eq!(numeric.exit_code(), 2);
}
