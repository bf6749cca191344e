use std::path::Path;
use std::process::{Command, Output};

fn dmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmn")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn train_eval_predict_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, train, test) = (d.join("c.json"), d.join("train"), d.join("test"));
    let (low, high, heat) = (d.join("low.ckpt"), d.join("high.ckpt"), d.join("h.pgm"));

    assert_eq!(code(&dmn(&["config", "--preset", "tiny", "--out", s(&cfg)])), 0);
    assert_eq!(code(&dmn(&["gen-data", "--out", s(&train), "--count", "6", "--size", "16x16", "--seed", "1"])), 0);
    assert_eq!(code(&dmn(&["gen-data", "--out", s(&test), "--count", "3", "--size", "16x16", "--seed", "2"])), 0);

    let out = dmn(&[
        "train", "--config", s(&cfg), "--data", s(&train), "--stage", "low", "--epochs", "2", "--seed", "4", "--out",
        s(&low),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch   2"));

    let out = dmn(&[
        "train", "--config", s(&cfg), "--data", s(&train), "--stage", "high", "--resume", s(&low), "--epochs", "1",
        "--val", s(&test), "--out", s(&high),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = dmn(&["eval", "--ckpt", s(&high), "--data", s(&test), "--threshold", "auto"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("cumulative mIoU") && text.contains("Pr@0.9"), "{text}");

    let out = dmn(&["eval", "--ckpt", s(&high), "--data", s(&test), "--threshold", "0.5"]);
    assert!(stdout(&out).starts_with("threshold 0.50"));

    let image = test.join("images/00000.ppm");
    let out = dmn(&["predict", "--ckpt", s(&high), "--image", s(&image), "--query", "red circle", "--out", s(&heat)]);
    assert_eq!(code(&out), 0);
    let pgm = std::fs::read(&heat).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), 13 + 256);
}

#[test]
fn training_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, data) = (d.join("c.json"), d.join("data"));
    dmn(&["config", "--out", s(&cfg)]);
    dmn(&["gen-data", "--out", s(&data), "--count", "3", "--size", "16x16"]);
    let run = |name: &str| {
        let p = d.join(name);
        let out = dmn(&["train", "--config", s(&cfg), "--data", s(&data), "--stage", "low", "--epochs", "1", "--out", s(&p)]);
        assert_eq!(code(&out), 0);
        std::fs::read(p).unwrap()
    };
    assert_eq!(run("a.ckpt"), run("b.ckpt"));
}

#[test]
fn decoder_stage_count_is_selectable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, data) = (d.join("c.json"), d.join("data"));
    dmn(&["config", "--out", s(&cfg)]);
    dmn(&["gen-data", "--out", s(&data), "--count", "2", "--size", "16x16"]);
    for stages in ["n-1", "log2", "1"] {
        let out = dmn(&[
            "train", "--config", s(&cfg), "--data", s(&data), "--stage", "low", "--epochs", "1", "--stages", stages,
            "--out", s(&d.join("m.ckpt")),
        ]);
        assert_eq!(code(&out), 0, "{stages}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = dmn(&["train", "--config", s(&cfg), "--data", s(&data), "--stage", "low", "--stages", "most"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn contract_violations_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, data) = (d.join("c.json"), d.join("data"));
    dmn(&["config", "--out", s(&cfg)]);
    dmn(&["gen-data", "--out", s(&data), "--count", "2", "--size", "16x16"]);

    assert_eq!(code(&dmn(&["gen-data", "--out", s(&data), "--count", "2", "--size", "16"])), 1);
    assert_eq!(code(&dmn(&["eval", "--ckpt", "x", "--data", "y", "--threshold", "1.5"])), 1);
    assert_eq!(code(&dmn(&["eval", "--ckpt", "x", "--data", "y", "--threshold", "high"])), 1);
    assert_eq!(code(&dmn(&["train", "--config", s(&cfg), "--data", s(&data), "--stage", "mid"])), 1);
    assert_eq!(code(&dmn(&["bench", "--reps", "3"])), 1);
    assert_eq!(code(&dmn(&["frobnicate"])), 1);

    let out = dmn(&["train", "--config", s(&cfg), "--data", s(&data), "--stage", "high"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--resume"));

    let bad = d.join("bad.json");
    std::fs::write(&bad, r#"{"epochs": "many"}"#).unwrap();
    assert_eq!(code(&dmn(&["train", "--config", s(&bad), "--data", s(&data), "--stage", "low"])), 1);

    assert_eq!(code(&dmn(&["--help"])), 0);
}

#[test]
fn io_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing");
    let out = dmn(&["eval", "--ckpt", s(&missing.join("m.ckpt")), "--data", s(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("m.ckpt"));
    let cfg = d.join("c.json");
    dmn(&["config", "--out", s(&cfg)]);
    assert_eq!(code(&dmn(&["train", "--config", s(&cfg), "--data", s(&missing), "--stage", "low"])), 2);
    assert_eq!(code(&dmn(&["train", "--config", s(&missing), "--data", s(&missing), "--stage", "low"])), 2);
}

#[test]
fn auto_threshold_needs_a_calibrated_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, data, ckpt) = (d.join("c.json"), d.join("data"), d.join("m.ckpt"));
    dmn(&["config", "--out", s(&cfg)]);
    dmn(&["gen-data", "--out", s(&data), "--count", "2", "--size", "16x16"]);
    dmn(&["train", "--config", s(&cfg), "--data", s(&data), "--stage", "low", "--epochs", "1", "--out", s(&ckpt)]);
    // Strip the stored threshold through the library and save again.
    let mut model = dmn_core::Dmn::from_checkpoint(&dmn_core::Checkpoint::load(&ckpt).unwrap()).unwrap();
    assert!(model.threshold().is_some());
    model.set_threshold(None);
    model.to_checkpoint().save(&ckpt).unwrap();
    let out = dmn(&["eval", "--ckpt", s(&ckpt), "--data", s(&data)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let out = dmn(&["bench", "--d", "8", "--T", "4", "--reps", "10", "--out", s(&csv)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[1].starts_with("sru,8,4,") && lines[2].starts_with("lstm,8,4,"));
}
