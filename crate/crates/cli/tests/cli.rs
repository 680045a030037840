use std::path::PathBuf;
use std::process::{Command, Output};

fn budgetnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_budgetnet"))
        .args(args)
        .env_remove("BUDGETNET_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    root.join(name).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn count_params_resnet18() {
    let out = budgetnet(&["count-params", "--config", &config("resnet18.conf")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().next().unwrap().ends_with("11173962"), "{text}");
    assert!(text.contains("over budget"));
}

#[test]
fn count_params_budget_model_reports_published_figure() {
    let out = budgetnet(&["count-params", "--config", &config("budget_model.conf")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("parameters: 4733610"), "{text}");
    assert!(text.contains("within budget"));
    assert!(text.contains("published total: 4697742"));
    assert!(text.contains("without squeeze-and-excitation: 4697162"));
    assert!(text.contains("note:"));
}

#[test]
fn grad_check_single_op() {
    let out = budgetnet(&["grad-check", "--op", "conv2d", "--cases", "5"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("all passed"));
}

#[test]
fn grad_check_rejects_unknown_op() {
    let out = budgetnet(&["grad-check", "--op", "softmax"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_is_a_usage_error() {
    let out = budgetnet(&["train", "--config", &config("tiny.conf"), "--epochs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--epochs") && err.contains("--help"), "{err}");
}

#[test]
fn missing_config_file_fails_with_one_line() {
    let out = budgetnet(&["count-params", "--config", "/nonexistent/x.conf"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn train_without_data_dir_explains_itself() {
    let out = budgetnet(&["train", "--config", &config("tiny.conf")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("BUDGETNET_DATA_DIR"));
}

#[test]
fn synth_train_resume_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let runs = dir.path().join("run");
    let data_s = data.to_str().unwrap();
    let runs_s = runs.to_str().unwrap();
    let out = budgetnet(&["synth-data", "--out", data_s, "--train", "200", "--test", "60"]);
    assert!(out.status.success());

    let tiny = config("tiny.conf");
    let out = budgetnet(&[
        "train", "--config", &tiny, "--epochs", "1", "--data-dir", data_s, "--output-dir", runs_s,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("epoch   1"));

    let ckpt = runs.join("last.ckpt");
    let out = budgetnet(&["train", "--resume", ckpt.to_str().unwrap(), "--epochs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(runs.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "{metrics}");

    let out = budgetnet(&["eval", "--checkpoint", runs.join("best.ckpt").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("test_acc"));

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_budgetnet"));
    let out = cmd
        .args(["train", "--config", &tiny, "--epochs", "1", "--subset", "50", "--output-dir"])
        .arg(dir.path().join("env_run"))
        .env("BUDGETNET_DATA_DIR", &data)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
