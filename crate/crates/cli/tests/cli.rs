use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// Writes a tiny MNIST-format dataset: label 1 when the left half is brighter.
fn write_dataset(dir: &Path) {
    for (prefix, n) in [("train", 120u32), ("t10k", 40)] {
        let mut images = vec![0, 0, 8, 3];
        for d in [n, 8, 8] {
            images.extend(d.to_be_bytes());
        }
        let mut labels = vec![0, 0, 8, 1];
        labels.extend(n.to_be_bytes());
        for i in 0..n as usize {
            let left = i % 2 == 0;
            for y in 0..8 {
                for x in 0..8 {
                    let jitter = ((i * 11 + y * 5 + x * 3) % 50) as u8;
                    images.push(if (x < 4) == left { 170 + jitter } else { 10 + jitter });
                }
            }
            labels.push(!left as u8);
        }
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
    }
}

fn pixadv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixadv"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pixadv(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn train_attack_sweep_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    write_dataset(&data);
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let data_dir = data.to_string_lossy().into_owned();
    let model = p("m/linear.pxnn");
    let common = ["--data-dir", &data_dir, "--model", &model];

    let trained = ok(&[&["train"], &common[..], &["--arch", "linear", "--epochs", "5"]].concat());
    assert!(trained.contains("test accuracy 1.0000"), "{trained}");
    assert!(tmp.path().join("m/linear.norm").exists());

    let out_dir = p("attack");
    let table = ok(&[&["attack"], &common[..], &["--images", "4", "--out-dir", &out_dir, "--png-pairs", "1"]].concat());
    assert!(table.contains("LocSearchAdv  linear"), "{table}");
    for f in ["metrics.csv", "metrics.txt", "images.csv", "transcript.jsonl", "manifest.txt"] {
        assert!(tmp.path().join("attack").join(f).exists(), "{f} missing");
    }
    let manifest = fs::read_to_string(tmp.path().join("attack/manifest.txt")).unwrap();
    assert!(manifest.contains("model_sha256 = ") && manifest.contains("[normalization]"));
    assert!(fs::read_to_string(tmp.path().join("attack/images.csv")).unwrap().lines().count() == 5);

    let stub_dir = p("stub");
    let stub = ok(&["attack", "--data-dir", &data_dir, "--oracle", "constant", "--images", "3", "--out-dir", &stub_dir]);
    assert!(stub.contains("NA") && stub.contains("constant"), "{stub}");

    let sweep_dir = p("sweep");
    ok(&[
        &["sweep", "--param", "p", "--values", "1,100"],
        &common[..],
        &["--attack", "randadv", "--images", "4", "--out-dir", &sweep_dir],
    ]
    .concat());
    let summary = fs::read_to_string(tmp.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(tmp.path().join("sweep/p=100/metrics.csv").exists());

    let metrics = p("attack/metrics.csv");
    let report = ok(&["report", &metrics, &p("sweep/p=1/metrics.csv")]);
    assert_eq!(report.lines().count(), 3);
    assert!(report.contains("RandAdv"));
}

#[test]
fn invalid_configuration_fails() {
    let out = pixadv(&["attack", "--attack", "fgsm", "--oracle", "constant"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model oracle"));
    let out = pixadv(&["attack", "--data-dir", "/nonexistent", "--oracle", "constant"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fetch_mnist"));
}
