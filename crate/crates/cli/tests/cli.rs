use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replaycodec")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pretrain(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    ok(&["pretrain", "--data", "source_a:1:8", "--preset", "micro", "--iterations", "5", "--batch", "2", "--seed", seed, "--out", s(&out)]);
    out.join("model.ckpt")
}

#[test]
fn generate_train_encode_decode() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--source", "source_b", "--seed", "3", "--count", "4", "--out", s(&data)]);
    assert!(data.join("images/0003.ppm").exists());
    let manifest = fs::read_to_string(data.join("MANIFEST.sha256")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(manifest.lines().all(|l| l.len() > 66 && l.as_bytes()[64] == b' '));

    let model = dir.path().join("pre/model.ckpt");
    ok(&[
        "pretrain", "--data", s(&data.join("dataset.toml")), "--preset", "micro", "--iterations", "5", "--batch", "2", "--out",
        s(&dir.path().join("pre")),
    ]);
    assert!(model.exists());

    let image = data.join("images/0000.ppm");
    let enc = dir.path().join("enc");
    let text = ok(&["encode", "--model", s(&model), "--input", s(&image), "--lambda", "100", "--out", s(&enc)]);
    assert!(text.contains("bpp"));
    let dec = dir.path().join("dec");
    ok(&["decode", "--model", s(&model), "--input", s(&enc.join("0000.ccbs")), "--out", s(&dec)]);
    let decoded = fs::read(dec.join("0000.ppm")).unwrap();
    assert!(decoded.starts_with(b"P6"));
    assert_eq!(decoded.len(), fs::read(&image).unwrap().len());

    // Identical inputs give byte-identical artifacts.
    let again = dir.path().join("pre2");
    ok(&["pretrain", "--data", s(&data.join("dataset.toml")), "--preset", "micro", "--iterations", "5", "--batch", "2", "--out", s(&again)]);
    assert_eq!(fs::read(again.join("MANIFEST.sha256")).unwrap(), fs::read(dir.path().join("pre/MANIFEST.sha256")).unwrap());
}

#[test]
fn fingerprint_gate_and_force_decode() {
    let dir = tempfile::tempdir().unwrap();
    let a = pretrain(dir.path(), "a", "0");
    let b = pretrain(dir.path(), "b", "1");
    let data = dir.path().join("data");
    ok(&["gen-data", "--source", "source_a", "--count", "1", "--out", s(&data)]);
    let enc = dir.path().join("enc");
    ok(&["encode", "--model", s(&a), "--input", s(&data.join("images/0000.ppm")), "--lambda", "64", "--out", s(&enc)]);
    let stream = enc.join("0000.ccbs");

    let refused = run(&["decode", "--model", s(&b), "--input", s(&stream), "--out", s(&dir.path().join("x"))]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("stage `decode` failed"));
    ok(&["decode", "--model", s(&b), "--input", s(&stream), "--force-decode", "--out", s(&dir.path().join("forced"))]);
    assert!(dir.path().join("forced/0000.ppm").exists());
}

#[test]
fn compat_with_identical_checkpoints_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let model = pretrain(dir.path(), "pre", "0");
    let data = dir.path().join("data");
    ok(&["gen-data", "--source", "source_a", "--seed", "9", "--count", "3", "--out", s(&data)]);
    let streams = dir.path().join("streams");
    for i in 0..3 {
        let image = data.join(format!("images/{i:04}.ppm"));
        ok(&["encode", "--model", s(&model), "--input", s(&image), "--lambda", "200", "--out", s(&streams)]);
    }
    let report = dir.path().join("report");
    let text = ok(&[
        "check-compat", "--old", s(&model), "--new", s(&model), "--streams", s(&streams), "--originals", s(&data.join("images")), "--out",
        s(&report),
    ]);
    assert!(text.contains("latents_equal true"));
    assert!(text.contains("failures 0"));
    let csv = fs::read_to_string(report.join("compat.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r.split(',').nth(4).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn finetune_and_rd_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let model = pretrain(dir.path(), "pre", "0");
    let ft = dir.path().join("kr");
    ok(&[
        "finetune", "--base", s(&model), "--strategy", "kr", "--alpha", "0.5", "--data", "source_b:2:8", "--replay-data", "source_a:1:8",
        "--iterations", "3", "--batch", "2", "--out", s(&ft),
    ]);
    let refused = run(&["finetune", "--base", s(&model), "--strategy", "kr", "--data", "source_b:2:8", "--iterations", "3", "--out", s(&ft)]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("stage `finetune` failed"));

    let rd = dir.path().join("rd");
    ok(&["eval-rd", "--model", s(&ft.join("model.ckpt")), "--data", "source_b:5:2", "--points", "4", "--out", s(&rd)]);
    let csv = rd.join("rd.csv");
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 5);
    assert!(rd.join("rd.svg").exists());
    // An untrained model spans too little PSNR for a BD-rate.
    let flat = run(&["bd-rate", "--anchor", s(&csv), "--test", s(&csv)]);
    assert!(String::from_utf8_lossy(&flat.stderr).contains("stage `bd-rate` failed"));
}

#[test]
fn bd_rate_of_identical_curves_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    fs::write(&csv, "lambda,bpp,psnr\n32,0.1,24\n100,0.2,26\n300,0.4,28\n1000,0.8,30\n").unwrap();
    assert_eq!(ok(&["bd-rate", "--anchor", s(&csv), "--test", s(&csv)]).trim(), "0.000000");
    let out = dir.path().join("bd");
    ok(&["bd-rate", "--anchor", s(&csv), "--test", s(&csv), "--out", s(&out)]);
    assert!(fs::read_to_string(out.join("MANIFEST.sha256")).unwrap().contains("bd_rate.txt"));
}

#[test]
fn small_scenario_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let text = ok(&[
        "scenario", "data_incremental", "--preset", "micro", "--pretrain-iterations", "4", "--finetune-iterations", "2", "--batch", "2",
        "--alpha-grid", "0,1", "--arch", "sequential", "--out", s(&out),
    ]);
    assert!(text.starts_with("method,"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let labels: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["pretrained", "ft_enc", "ft_enc_dec", "kr", "kr_alpha0", "kr_alpha1"]);
    assert!(out.join("summary.svg").exists());
    let manifest = fs::read_to_string(out.join("MANIFEST.sha256")).unwrap();
    assert!(manifest.contains("  seed0/kr.ckpt"));
    assert!(fs::read_to_string(out.join("scenario.toml")).unwrap().contains("sequential"));
}

#[test]
fn failures_report_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let bad = run(&["pretrain", "--data", "source_q:1:2", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("stage `load data` failed"));
    let bad = run(&["scenario", "nothing", "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("stage `arguments` failed"));
    let bad = run(&["decode", "--model", "/nonexistent.ckpt", "--input", "x.ccbs", "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("stage `load checkpoint` failed"));
}
