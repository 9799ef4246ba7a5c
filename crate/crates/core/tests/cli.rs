use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn memsnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memsnn"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY: &str = r#"{
    "seed": 1,
    "output_dir": "out",
    "num_classes": 2,
    "data": { "visual": { "synth": { "kind": "spatial", "classes": 2, "samples_per_class": 6 } } },
    "grid": { "memories": ["hopfield"], "modalities": ["visual"] },
    "model": { "dims": "desk" },
    "train": { "epochs": 1, "batch_size": 4 },
    "engram": { "per_class": 2 }
}"#;

#[test]
fn synth_and_convert() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsnn(
        &[
            "synth",
            "--kind",
            "temporal",
            "--out",
            "raw",
            "--classes",
            "2",
            "--samples-per-class",
            "3",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("raw/1/00005.evt").exists());
    let out = memsnn(&["convert", "--in", "raw", "--out", "copy"], dir.path());
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        "wrote 6 files to copy"
    );
    let a = fs::read(dir.path().join("raw/0/00000.evt")).unwrap();
    let b = fs::read(dir.path().join("copy/0/00000.evt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablate_then_engram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = memsnn(&["ablate", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().starts_with("M3,hopfield,"), "{csv}");
    let out = memsnn(
        &["engram", "--config", &cfg, "--checkpoints", "out/cells"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/engram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = memsnn(&["ablate", "--config", "absent.json"], dir.path());
    assert_eq!(missing.status.code(), Some(3));

    let cfg = write_config(dir.path(), r#"{"seed": 1, "epochs": 3}"#);
    assert_eq!(
        memsnn(&["ablate", "--config", &cfg], dir.path()).status.code(),
        Some(2)
    );

    let cfg = write_config(dir.path(), TINY);
    let out = memsnn(
        &["engram", "--config", &cfg, "--checkpoints", "nowhere"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("M3-visual"));

    let out = memsnn(&["joint", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2), "joint without audio data");

    assert_eq!(
        memsnn(&["synth", "--kind", "smell", "--out", "x"], dir.path())
            .status
            .code(),
        Some(2)
    );
}
