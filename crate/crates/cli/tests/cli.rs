use std::path::Path;
use std::process::{Command, Output};

use cka_cli::config::load_config;
use cka_cli::RunConfig;
use serde_json::Value;

fn cka(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cka")).args(args).output().expect("run cka")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn tiny(dir: &Path) -> Vec<String> {
    [
        "data.blobs.classes=4",
        "data.blobs.dim=8",
        "data.blobs.per_class=40",
        "model.teacher_widths=[[16]]",
        "model.student_widths=[16]",
        "model.projection_hidden=8",
        "model.projection_output=4",
        "model.adapter_width=8",
        "model.common_width=8",
        "pretrain.epochs=2",
        "train.epochs=1",
        "train.batch_size=16",
        "seeds=[0,1]",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([format!("output_dir={}", dir.display())])
    .flat_map(|s| ["--set".to_string(), s])
    .collect()
}

fn cka_tiny(dir: &Path, args: &[&str]) -> Output {
    let mut all = tiny(dir);
    all.extend(args.iter().map(|s| s.to_string()));
    Command::new(env!("CARGO_BIN_EXE_cka")).args(&all).output().expect("run cka")
}

#[test]
fn shipped_desk_config_matches_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    assert_eq!(load_config(Some(&path), &[]).unwrap(), RunConfig::desk_preset());
}

#[test]
fn bad_config_exits_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = cka(&["--set", &format!("output_dir={}", dir.path().display()), "--set", "train.alpha=2", "amalgamate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert_eq!(err["path"], "train.alpha");

    let out = cka(&["--set", "train.lambda_x=1", "amalgamate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["path"], "train.lambda_x");
}

#[test]
fn missing_teachers_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = cka_tiny(dir.path(), &["amalgamate"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("teacher_0"));

    let out = cka_tiny(dir.path(), &["evaluate", "--ckpt", "/nonexistent/ckpt"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn overrides_after_the_subcommand_are_rejected() {
    let out = cka(&["amalgamate", "--set", "train.epochs=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_gradcheck_prints_one_line() {
    let out = cka(&["gradcheck", "--op", "mmd", "--configs", "3"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("mmd") && stdout.trim_end().ends_with("PASS"), "{stdout}");

    assert_ne!(cka(&["gradcheck", "--op", "nope"]).status.code(), Some(0));
}

#[test]
fn pipeline_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(cka_tiny(d, &["gen-data"]).status.success());
    assert!(d.join("data/train/meta.json").exists());

    let out = cka_tiny(d, &["pretrain"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);

    for args in [&["amalgamate"][..], &["baseline", "--method", "kd"], &["baseline", "--method", "ensemble"]] {
        let out = cka_tiny(d, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let summary: Value = serde_json::from_slice(&std::fs::read(d.join("cka/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["teachers_unchanged"], true);
    assert!(d.join("cka/metrics.jsonl").exists() && d.join("resolved_config.json").exists());

    let ckpt = d.join("cka/student");
    let out = cka_tiny(d, &["evaluate", "--ckpt", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(eval["acc_union"], summary["acc_union"]);
}

#[test]
fn ablation_table_has_one_row_per_variant_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = cka_tiny(dir.path(), &["ablate", "--axis", "losses"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ablate-losses.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,seed,acc_union,acc_task1,acc_task2");
    assert_eq!(lines.len(), 1 + 5 * 2);
    let methods: Vec<&str> = lines[1..6].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["CKA", "CKA-Intra", "CKA-Inter", "KD", "CFL"]);
}

#[test]
fn metric_ablation_labels_its_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = cka_tiny(dir.path(), &["--set", "seeds=[0]", "ablate", "--axis", "inter-metric"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ablate-inter-metric.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["CKA-NoInter", "CKA-Euclidean", "CKA-Cosine", "CKA-MMD"]);
}
