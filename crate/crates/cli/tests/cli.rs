use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn mdgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = mdgan(&[
            "gen-data",
            "--n",
            "4",
            "--seed",
            "7",
            "--out",
            dir.path().to_str().unwrap(),
            "--hr-size",
            "32",
            "--glyph-cell",
            "12",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = mdgan(&["gen-data", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn missing_subcommand_exits_2() {
    let out = mdgan(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let out = mdgan(&["train", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn grad_check_passes() {
    let out = mdgan(&["grad-check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("conv2d"));
    assert!(text.contains("all gradients within"));
}

/// End-to-end: generate data, train a few steps, super-resolve a sample,
/// evaluate against the bicubic baseline.
#[test]
fn pipeline_smoke() {
    let root = TempDir::new().unwrap();
    let data = root.path().join("data");
    let run_dir = root.path().join("run");
    let out = mdgan(&[
        "gen-data",
        "--n",
        "10",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
        "--hr-size",
        "32",
        "--glyph-cell",
        "12",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg_path = root.path().join("cfg.toml");
    let classifier_path = root.path().join("classifier.ckpt");
    std::fs::write(
        &cfg_path,
        format!(
            "train_dir = {:?}\nholdout_dir = {:?}\nout_dir = {:?}\n\
             batch_size = 2\npretrain_steps = 2\ngan_steps = 1\nrefine_steps = 1\n\
             classifier_steps = 5\ncheckpoint_interval = 0\nclassifier_path = {:?}\n",
            data.to_str().unwrap(),
            data.to_str().unwrap(),
            run_dir.to_str().unwrap(),
            classifier_path.to_str().unwrap(),
        ),
    )
    .unwrap();

    let out = mdgan(&["train-classifier", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(classifier_path.exists());

    let out = mdgan(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run_dir.join("model.ckpt");
    assert!(ckpt.exists());
    assert!(run_dir.join("train_log.tsv").exists());

    let sr_out = root.path().join("sr.png");
    let out = mdgan(&[
        "sr",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        data.join("00000").to_str().unwrap(),
        "--out",
        sr_out.to_str().unwrap(),
        "--dump-layers",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = mdgan_core::imaging::load_image(&sr_out).unwrap();
    // LR side is 16, scale 2.
    assert_eq!((img.width, img.height), (32, 32));
    assert!(root.path().join("sr.alpha.pgm").exists());

    let csv = root.path().join("report.csv");
    let out = mdgan(&[
        "eval",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("bicubic"));
    assert!(table.contains("ours"));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().count(), 3);
}

#[test]
fn decompose_writes_layers() {
    let root = TempDir::new().unwrap();
    let data = root.path().join("data");
    let out = mdgan(&[
        "gen-data",
        "--n",
        "1",
        "--seed",
        "11",
        "--out",
        data.to_str().unwrap(),
        "--hr-size",
        "32",
        "--glyph-cell",
        "12",
    ]);
    assert!(out.status.success());
    let layers = root.path().join("layers");
    let out = mdgan(&[
        "decompose",
        "--input",
        data.join("00000/hr.ppm").to_str().unwrap(),
        "--out",
        layers.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["alpha.pgm", "fg.ppm", "bg.ppm"] {
        assert!(layers.join(f).exists(), "{f} missing");
    }
}
