use std::path::Path;
use std::process::{Command, Output};

fn poseprior(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poseprior"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path) -> String {
    let out = poseprior(&["fixture", "--out", dir.to_str().unwrap(), "--sequences", "5", "--frames", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

const FAST: [&str; 8] = ["--epochs", "1", "--projection-iters", "2", "--max-iters", "3", "--workers", "1"];

#[test]
fn pipeline_runs_from_one_command() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let mut args = vec!["pipeline", "--config", &config, "--trajectories"];
    args.extend(FAST);
    let out = poseprior(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("detector,stage,label,poses,pck@0.05"));
    assert_eq!(stdout.lines().count(), 1 + 6);
    assert!(stdout.contains("noisy-a,corrected,Polar baseline"));
    assert!(dir.path().join("out/eval/summary.json").exists());
}

#[test]
fn stages_run_one_by_one_and_honor_out() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out_dir = dir.path().join("elsewhere");
    let o = out_dir.to_str().unwrap();
    let ok = |args: &[&str]| {
        let out = poseprior(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["convert", "--config", &config, "--out", o]);
    let prep = ok(&["prepare", "--config", &config, "--out", o]);
    assert!(prep.contains("train_full 8"), "{prep}");
    ok(&["synth", "--config", &config, "--out", o]);
    let train = ok(&["train", "--config", &config, "--out", o, "--epochs", "1", "--projection-iters", "2"]);
    assert!(train.starts_with("Polar baseline  epochs 1"), "{train}");
    let corr = ok(&["correct", "--config", &config, "--out", o, "--max-iters", "2", "--stop-threshold", "0"]);
    assert_eq!(corr.lines().count(), 3);
    assert!(corr.contains("mean iterations 2.00"), "{corr}");
    ok(&["eval", "--config", &config, "--out", o]);
    assert!(out_dir.join("eval/report.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn ablation_configurations_run_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let variants: [(&str, &[&str]); 5] = [
        ("Polar baseline", &[]),
        ("Polar w/o bp", &["--batch-projection", "false"]),
        ("Polar w/o grad. loss", &["--grad-loss", "false"]),
        ("Polar w/o AR. dist.", &["--distance", "geodesic"]),
        ("Angular baseline", &["--representation", "angular", "--distance", "angular"]),
    ];
    for (i, (label, flags)) in variants.iter().enumerate() {
        let out_dir = dir.path().join(format!("run{i}"));
        let mut args = vec!["pipeline", "--config", &config, "--out", out_dir.to_str().unwrap()];
        args.extend(FAST);
        args.extend(*flags);
        let out = poseprior(&args);
        assert!(out.status.success(), "{label}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        let rows: Vec<&str> = stdout.lines().skip(1).collect();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.split(',').nth(2) == Some(label)), "{label}: {stdout}");
    }
}

#[test]
fn single_file_conversion() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let input = dir.path().join("detections/noisy-a.csv");
    let output = dir.path().join("a.csv");
    let out = poseprior(&["convert", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap(), "--format", "coco"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "20 records");
    let text = std::fs::read_to_string(output).unwrap();
    assert_eq!(text.lines().count(), 20);
}

#[test]
fn exit_codes() {
    assert_eq!(poseprior(&["bogus"]).status.code(), Some(1));
    assert_eq!(poseprior(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(poseprior(&["prepare", "--config", missing.to_str().unwrap()]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"x\"\n").unwrap();
    assert_eq!(poseprior(&["prepare", "--config", bad.to_str().unwrap()]).status.code(), Some(1));

    let config = fixture(dir.path());
    let out = poseprior(&["train", "--config", &config, "--batch-size", "0"]);
    assert_eq!(out.status.code(), Some(1));
    // Training before synthesis finds no data files.
    assert_eq!(poseprior(&["train", "--config", &config]).status.code(), Some(2));
}
