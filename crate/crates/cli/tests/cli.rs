//! Black-box tests of the command-line interface: flag surface, exit
//! codes, artifact layout.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusion-mammo"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--workdir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_subcommands_and_global_flags() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    for sub in [
        "synth", "ingest", "train-cnn", "extract", "train-clf", "evaluate", "report", "run",
    ] {
        assert!(text.contains(sub), "--help missing subcommand {sub}:\n{text}");
    }
    for flag in ["--workdir", "--config", "--set"] {
        assert!(text.contains(flag), "--help missing flag {flag}:\n{text}");
    }
    let extract_help = bin().args(["extract", "--help"]).output().unwrap();
    let text = stdout(&extract_help);
    for flag in ["--deep", "--hog", "--lbp", "--fused"] {
        assert!(text.contains(flag), "extract --help missing {flag}:\n{text}");
    }
}

#[test]
fn synth_writes_manifest_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["synth", "--n", "20", "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("20 synthetic images"));
    assert!(dir.path().join("manifest.csv").exists());
    assert!(dir.path().join("images/synth_00019.png").exists());
}

#[test]
fn synth_with_odd_count_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["synth", "--n", "21"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("even"));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["--set", "sedd=1", "synth", "--n", "20"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sedd"));
}

#[test]
fn config_file_applies_and_set_overrides_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.conf");
    std::fs::write(&cfg_path, "seed=5\nxgb_rounds=4\nepochs=1\n").unwrap();
    let out = bin()
        .arg("--workdir")
        .arg(dir.path())
        .arg("--config")
        .arg(&cfg_path)
        .args(["--set", "seed=9", "synth", "--n", "20"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    // --set wins over the file: images must match a seed-9 generation.
    let other = tempfile::tempdir().unwrap();
    let reference = run_in(other.path(), &["synth", "--n", "20", "--seed", "9"]);
    assert!(reference.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("images/synth_00000.png")).unwrap(),
        std::fs::read(other.path().join("images/synth_00000.png")).unwrap()
    );
}

#[test]
fn stage_run_out_of_order_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // No manifest at all.
    let out = run_in(dir.path(), &["train-cnn"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("synth"), "{}", stderr(&out));

    // Manifest but no features.
    let synth = run_in(dir.path(), &["synth", "--n", "20"]);
    assert!(synth.status.success());
    let out = run_in(dir.path(), &["evaluate"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("extract"), "{}", stderr(&out));
}

#[test]
fn corrupt_feature_store_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["synth", "--n", "20"]).status.success());
    let extract = run_in(dir.path(), &["--set", "epochs=1", "extract", "--hog", "--lbp"]);
    assert!(extract.status.success(), "{}", stderr(&extract));
    let store = dir.path().join("features.dat");
    let mut bytes = std::fs::read(&store).unwrap();
    bytes[0] = b'X';
    std::fs::write(&store, bytes).unwrap();
    let out = run_in(dir.path(), &["--set", "feature_set=deep", "train-clf"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
}

#[test]
fn full_tiny_run_writes_all_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["synth", "--n", "20"]).status.success());
    let out = run_in(
        dir.path(),
        &["--set", "epochs=1", "--set", "xgb_rounds=5", "run"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("accuracy"), "{text}");
    for artifact in [
        "network.cvgg",
        "features.dat",
        "features.idx",
        "classifier.tree",
        "report.json",
        "report.txt",
        "confusion.svg",
    ] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!(report["accuracy"].is_number());
    assert!(report["confusion"].is_array());
    assert!(report.get("wall_time_ms").is_none());
}

#[test]
fn extract_deep_without_network_warns_and_initializes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["synth", "--n", "20"]).status.success());
    let out = run_in(dir.path(), &["extract", "--deep"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("fresh"),
        "expected fresh-network warning, got: {}",
        stderr(&out)
    );
    assert!(dir.path().join("network.cvgg").exists());
}
