use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lvc_core::checkpoint::Checkpoint;
use lvc_core::coder::bitstream::read_stream;
use lvc_core::nets::{Model, ModelConfig};

fn lvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvc")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = lvc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn checkpoint(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join(format!("model_{seed}.ckpt"));
    let model = Model::new(ModelConfig { features: 4 }, seed).unwrap();
    Checkpoint::from_model(model).save(&path).unwrap();
    path
}

fn clip(dir: &Path, frames: usize, size: usize) -> PathBuf {
    let path = dir.join(format!("clip_{frames}_{size}.yuv"));
    ok(&["synth", "--out", s(&path), "--frames", &frames.to_string(), "--size", &size.to_string()]);
    path
}

#[test]
fn training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path, steps: &str| {
        vec![
            "train".to_string(),
            "--out".into(),
            s(out).into(),
            "--lambda".into(),
            "0.01".into(),
            "--steps".into(),
            steps.into(),
            "--features".into(),
            "4".into(),
            "--crop".into(),
            "16".into(),
            "--batch-size".into(),
            "1".into(),
            "--checkpoint-every".into(),
            "2".into(),
        ]
    };
    let run = |out: &Path, steps: &str| {
        let a = args(out, steps);
        ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a, "4");
    run(&b, "4");
    let curve_a = std::fs::read(a.join("curve.csv")).unwrap();
    assert_eq!(curve_a, std::fs::read(b.join("curve.csv")).unwrap());
    assert!(a.join("final.ckpt").exists() && a.join("step_2.ckpt").exists() && a.join("manifest.json").exists());

    // resuming from step 2 continues the numbering and the trajectory
    let c = dir.path().join("c");
    run(&c, "2");
    let mut resume = args(&c, "4");
    resume.extend(["--resume".to_string(), s(&c.join("final.ckpt")).to_string()]);
    ok(&resume.iter().map(String::as_str).collect::<Vec<_>>());
    let curve_c = std::fs::read_to_string(c.join("curve.csv")).unwrap();
    let steps: Vec<&str> = curve_c.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0", "1", "2", "3"]);
    assert_eq!(curve_c.as_bytes(), &curve_a[..]);
}

#[test]
fn missing_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = lvc(&["train", "--out", s(dir.path()), "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`lambda`"));

    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[train]\nlambda = 0.01\nsteps = 1\nfeatures = 4\ncrop = 16\nbatch_size = 1\nbogus = 3\n").unwrap();
    let out = lvc(&["--config", s(&cfg), "train", "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = lvc(&["code", "--input", "x.yuv", "--checkpoint", "x.ckpt", "--out", s(dir.path()), "--height", "16"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`width`"));
}

#[test]
fn code_and_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint(dir.path(), 1);
    let yuv = clip(dir.path(), 9, 32);
    let geo = ["--width", "32", "--height", "32"];

    let ai = dir.path().join("ai");
    let mut a = vec!["code", "--input", s(&yuv), "--checkpoint", s(&ckpt), "--out", s(&ai), "--mode", "AI", "--gops", "1"];
    a.extend(geo);
    ok(&a);
    let (_, chunks) = read_stream(&std::fs::read(ai.join("stream.lvc")).unwrap()).unwrap();
    assert_eq!(chunks.len(), 1);

    let ra = dir.path().join("ra");
    let mut a = vec!["code", "--input", s(&yuv), "--checkpoint", s(&ckpt), "--out", s(&ra), "--mode", "RA"];
    a.extend(geo);
    ok(&a);
    let stream = ra.join("stream.lvc");
    let (_, chunks) = read_stream(&std::fs::read(&stream).unwrap()).unwrap();
    assert_eq!(chunks.len(), 9);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ra.join("report.json")).unwrap()).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ra.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let dec = dir.path().join("dec");
    let out = ok(&["decode", "--bitstream", s(&stream), "--checkpoint", s(&ckpt), "--out", s(&dec), "--reference", s(&yuv)]);
    let psnr: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert_eq!(psnr.to_bits(), report["totals"]["psnr"].as_f64().unwrap().to_bits());
    assert_eq!(std::fs::metadata(dec.join("decoded.yuv")).unwrap().len(), 9 * 32 * 32 * 3 / 2);

    // truncation and a different model are refused with structured errors
    let bytes = std::fs::read(&stream).unwrap();
    let cut = dir.path().join("cut.lvc");
    std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    let out = lvc(&["decode", "--bitstream", s(&cut), "--checkpoint", s(&ckpt), "--out", s(&dec)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chunk 8"), "{}", String::from_utf8_lossy(&out.stderr));
    let other = checkpoint(dir.path(), 2);
    let out = lvc(&["decode", "--bitstream", s(&stream), "--checkpoint", s(&other), "--out", s(&dec)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint mismatch"));
}

#[test]
fn eval_and_visualize_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (c1, c2) = (checkpoint(dir.path(), 3), checkpoint(dir.path(), 4));
    let yuv = clip(dir.path(), 3, 32);
    let out = dir.path().join("eval");
    ok(&[
        "eval", "--input", s(&yuv), "--checkpoint", s(&c1), "--checkpoint", s(&c2), "--out", s(&out), "--width", "32",
        "--height", "32", "--mode", "RA", "--gop-size", "2", "--fps", "30", "--label", "A/clip",
    ]);
    for f in ["rd.csv", "rd.png", "eval.json", "gop_0.json", "gop_1.png", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let vis = dir.path().join("vis");
    ok(&[
        "visualize", "--input", s(&yuv), "--checkpoint", s(&c1), "--out", s(&vis), "--width", "32", "--height", "32",
        "--mode", "RA", "--gop-size", "2", "--frame", "1",
    ]);
    let pngs = std::fs::read_dir(&vis).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 8 + 6);
}

#[test]
fn bdrate_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    std::fs::write(&a, "label,rate,psnr\nB/x,1.0,30.0\nB/x,2.0,33.0\nB/x,4.0,36.0\nB/x,8.0,38.5\n").unwrap();
    let out = ok(&["bdrate", "--anchor", s(&a), "--test", s(&a)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.00%"));
    let far = dir.path().join("far.csv");
    std::fs::write(&far, "label,rate,psnr\nB/x,1.0,50.0\nB/x,2.0,53.0\nB/x,4.0,56.0\n").unwrap();
    let out = lvc(&["bdrate", "--anchor", s(&a), "--test", s(&far)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("do not overlap"));
}

#[test]
fn missing_encoder_is_a_status() {
    let dir = tempfile::tempdir().unwrap();
    let yuv = clip(dir.path(), 9, 16);
    let out_dir = dir.path().join("anchors");
    let out = lvc(&[
        "anchors", "--input", s(&yuv), "--out", s(&out_dir), "--width", "16", "--height", "16", "--ffmpeg",
        "/nonexistent/ffmpeg",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let status: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("anchor.json")).unwrap()).unwrap();
    assert_eq!(status["status"], "unavailable");
}
