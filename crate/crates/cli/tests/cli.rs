use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("t10k-images-idx3-ubyte").is_file().then_some(dir)
}

fn sbnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbnn")).args(args).output().unwrap()
}

fn smoke(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--train-samples",
        "200",
        "--test-samples",
        "200",
        "--epochs",
        "3",
    ];
    args.extend_from_slice(extra);
    sbnn(&args)
}

#[test]
fn missing_data_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = smoke(&tmp.path().join("nope"), &tmp.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load MNIST"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sbnn(&["sweep", "nonsense"]).status.code(), Some(2));
    assert_eq!(sbnn(&["train", "--block-size", "x"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(sbnn(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("bad.sbnn");
    fs::write(&ckpt, b"SBNN\x01\x00\x00\x00garbage-bytes").unwrap();
    let data = mnist_dir().unwrap_or_else(|| tmp.path().to_path_buf());
    let out = sbnn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data-dir", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let missing = tmp.path().join("missing.sbnn");
    assert_eq!(sbnn(&["eval", "--checkpoint", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let Some(data) = mnist_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let out = smoke(&data, &tmp.path().join("run"), &["--learning-rate", "1e30"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn smoke_train_is_fast_and_reproducible() {
    let Some(data) = mnist_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let started = Instant::now();
    assert!(smoke(&data, &a, &["--seed", "7"]).status.success());
    assert!(started.elapsed().as_secs() < 60);
    assert!(smoke(&data, &b, &["--seed", "7"]).status.success());
    for f in ["metrics.csv", "model.sbnn"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,train_acc,test_acc,wall_seconds\n"));
    assert_eq!(metrics.lines().count(), 4);
    assert!(a.join("config.json").is_file());

    let ckpt = a.join("model.sbnn");
    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data-dir", data.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = sbnn(&args);
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    assert_eq!(eval(&[]), eval(&[]));
    let pruned = eval(&["--drop-frac", "0.52"]);
    let activity: f64 = pruned
        .lines()
        .find_map(|l| l.strip_prefix("activity "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((activity - 0.48).abs() < 0.005, "{pruned}");
}

#[test]
fn config_file_is_snapshotted_and_flags_win() {
    let Some(data) = mnist_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"seed": 3, "block_size": 4, "epochs": 1, "train_samples": 100, "test_samples": 100}"#).unwrap();
    let out_dir = tmp.path().join("run");
    let out = sbnn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let snap: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(snap["seed"], 5);
    assert_eq!(snap["block_size"], 4);

    let rerun = tmp.path().join("rerun");
    let out = sbnn(&[
        "train",
        "--config",
        out_dir.join("config.json").to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        fs::read(out_dir.join("model.sbnn")).unwrap(),
        fs::read(rerun.join("model.sbnn")).unwrap()
    );
}

#[test]
fn sigma_axis_at_zero_equals_noiseless_hw() {
    let Some(data) = mnist_dir() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert!(smoke(&data, &run, &[]).status.success());
    let cfg = tmp.path().join("sigma.json");
    fs::write(&cfg, r#"{"sweep": {"sigmas": [0.0]}, "test_samples": 200}"#).unwrap();
    let ckpt = run.join("model.sbnn");
    let out = sbnn(&[
        "sweep",
        "sigma",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = fs::read_to_string(run.join("sweep_sigma.csv")).unwrap();
    let acc: f64 = sweep.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    let hw = sbnn(&[
        "eval",
        "--hw",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--test-samples",
        "200",
    ]);
    let printed = String::from_utf8(hw.stdout).unwrap();
    assert!(printed.contains(&format!("test_acc {acc}\n")), "{printed} vs {acc}");
    let variation = fs::read_to_string(run.join("variation.csv")).unwrap();
    assert!(variation.starts_with("sigma_cell,trial,dot_value\n"));
    assert_eq!(variation.lines().count(), 101);
}
