use super::*;
use crate::events::SynthKind;

fn tiny(out: &Path, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(
        r#"{
            "seed": 5,
            "num_classes": 2,
            "model": { "dims": "desk" },
            "train": { "batch_size": 8 }
        }"#,
    )
    .unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg.train.epochs = epochs;
    cfg.data.visual = Some(DataSource::Synth(SynthConfig::spatial(2, 10, 1)));
    cfg.data.audio = Some(DataSource::Synth(SynthConfig::temporal(2, 10, 2)));
    cfg.grid.memories = vec![MemoryKind::None];
    cfg.grid.modalities = vec![Modality::Visual];
    cfg
}

#[test]
fn minimal_config_takes_defaults() {
    let cfg = ExperimentConfig::from_json(r#"{"seed": 3}"#).unwrap();
    assert_eq!(cfg.num_classes, 10);
    assert_eq!(cfg.test_fraction, 0.2);
    assert_eq!(cfg.grid.memories.len(), 5);
    assert_eq!(cfg.model.dims.resolve(), ModelDims::default());
    assert_eq!(cfg.cells().len(), 10);
}

#[test]
fn missing_seed_and_unknown_fields_are_config_errors() {
    for text in [
        r#"{}"#,
        r#"{"seed": 1, "sed": 2}"#,
        r#"{"seed": 1, "train": {"epoch": 2}}"#,
    ] {
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
}

#[test]
fn data_sources_parse() {
    let cfg = ExperimentConfig::from_json(
        r#"{"seed": 1, "data": {
            "visual": {"dir": {"train": "a", "test": "b"}},
            "audio": {"synth": {"kind": "temporal", "size": 64}}
        }}"#,
    )
    .unwrap();
    assert_eq!(
        cfg.data.visual,
        Some(DataSource::Dir {
            train: "a".into(),
            test: Some("b".into())
        })
    );
    match &cfg.data.audio {
        Some(DataSource::Synth(s)) => assert_eq!(s.kind, SynthKind::Temporal),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cell_seeds_do_not_depend_on_the_grid() {
    let mut a = ExperimentConfig::from_json(r#"{"seed": 9}"#).unwrap();
    let full = a.cells();
    a.grid.memories = vec![MemoryKind::Hopfield];
    a.grid.modalities = vec![Modality::Audio];
    let one = a.cells();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].id, "M3-audio");
    assert_eq!(full.iter().find(|c| c.id == "M3-audio"), Some(&one[0]));
}

#[test]
fn empty_grid_and_mismatched_synth_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 0);
    cfg.grid.memories.clear();
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = tiny(dir.path(), 0);
    cfg.data.visual = Some(DataSource::Synth(SynthConfig::temporal(2, 10, 1)));
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = tiny(dir.path(), 0);
    cfg.num_classes = 3;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn geometry_mismatch_is_caught_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 1);
    let mut s = SynthConfig::spatial(2, 10, 1);
    s.size = 20;
    cfg.data.visual = Some(DataSource::Synth(s));
    assert!(matches!(run_ablation(&cfg), Err(Error::Config(_))));
    assert!(!dir.path().join("cells").exists());
}

#[test]
fn unreadable_data_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 1);
    cfg.grid.modalities = vec![Modality::Visual, Modality::Audio];
    cfg.data.audio = Some(DataSource::Dir {
        train: dir.path().join("nope"),
        test: None,
    });
    let err = run_ablation(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(!dir.path().join("cells").exists());
}

#[test]
fn single_cell_ablation_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 0);
    let summary = run_ablation(&cfg).unwrap();
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(summary.rows[0].delta, 0.0);
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# schema: memsnn-ablation v1");
    assert_eq!(lines[1], "Model,Memory,Visual,Audio,Average,Delta");
    assert_eq!(lines.len(), 3);
    let acc = summary.cells[0].results[0].accuracy;
    assert_eq!(lines[2], format!("M1,none,{},,{},0.00", pct(acc), pct(acc)));
    for f in ["metrics.jsonl", "model.ckpt", "report.json"] {
        assert!(dir.path().join("cells/M1-visual").join(f).exists(), "{f}");
    }
    let ckpt = fs::read(dir.path().join("cells/M1-visual/model.ckpt")).unwrap();
    run_ablation(&cfg).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("ablation.csv")).unwrap(), csv);
    assert_eq!(
        fs::read(dir.path().join("cells/M1-visual/model.ckpt")).unwrap(),
        ckpt
    );
}

#[test]
fn delta_is_relative_to_the_best_average() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 0);
    cfg.grid.memories = vec![MemoryKind::None, MemoryKind::Hgrn];
    cfg.grid.modalities = vec![Modality::Visual, Modality::Audio];
    cfg.grid.dual = Some(MemoryKind::Hgrn);
    let summary = run_ablation(&cfg).unwrap();
    assert_eq!(summary.rows.len(), 3);
    assert_eq!(summary.rows[2].model, "M4-dual");
    let best = summary.rows.iter().map(|r| r.average).fold(f64::MIN, f64::max);
    for r in &summary.rows {
        let v = r.visual.unwrap();
        let a = r.audio.unwrap();
        assert_eq!(r.average, (v + a) / 2.0);
        assert_eq!(r.delta, r.average - best);
    }
    assert!(summary.rows.iter().any(|r| r.delta == 0.0));
}

#[test]
fn untrained_joint_matches_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 0);
    let r = run_joint(&cfg).unwrap();
    for d in [
        r.delta.visual,
        r.delta.audio,
        r.delta.arithmetic_mean,
        r.delta.pooled_mean,
    ] {
        assert_eq!(d, 0.0);
    }
    let csv = fs::read_to_string(dir.path().join("joint.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "Row,Visual,Audio,ArithmeticMean,PooledMean");
    assert!(lines[4].starts_with("Delta,0.00,0.00,0.00,0.00"));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("joint.json")).unwrap()).unwrap();
    assert!(json["average_discrepancy"].is_boolean());
    assert!(json["joint"]["arithmetic_mean"].is_number());
    assert!(json["joint"]["pooled_mean"].is_number());
}

#[test]
fn joint_needs_both_modalities() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 0);
    cfg.data.audio = None;
    assert!(matches!(run_joint(&cfg), Err(Error::Config(_))));
}

#[test]
fn engram_reports_missing_checkpoint_by_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 0);
    let err = run_engram(&cfg, &dir.path().join("cells")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("M1-visual"), "{err}");
}

#[test]
fn engram_pairs_modalities_of_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 0);
    cfg.grid.memories = vec![MemoryKind::Hgrn];
    cfg.grid.modalities = vec![Modality::Visual, Modality::Audio];
    cfg.engram.per_class = 2;
    run_ablation(&cfg).unwrap();
    let reports = run_engram(&cfg, &dir.path().join("cells")).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].alignment, reports[1].alignment);
    assert!(reports
        .iter()
        .all(|r| r.alignment.is_some() && r.transfer_accuracy.is_some()));
    let csv = fs::read_to_string(dir.path().join("engram.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# schema: memsnn-engram v1");
    assert_eq!(
        lines[1],
        "Model,Modality,Silhouette,DB,Transfer,AlignmentMeanDiag,EffDimFraction"
    );
    assert!(lines[2].starts_with("M4,visual,"));
    assert!(lines[3].starts_with("M4,audio,"));
    assert!(dir.path().join("features/M4-audio.csv").exists());
}

#[test]
fn synth_then_convert_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let cfg = SynthConfig::temporal(2, 3, 4);
    assert_eq!(synth(&cfg, &raw).unwrap(), 6);
    let conv = dir.path().join("conv");
    assert_eq!(convert(&raw, &conv).unwrap(), 6);
    let a = crate::events::read_streams(&raw).unwrap();
    let b = crate::events::read_streams(&conv).unwrap();
    assert_eq!(a, b);
    let one = crate::events::event_files(&raw).unwrap()[0].clone();
    assert_eq!(convert(&one, &dir.path().join("single")).unwrap(), 1);
    assert!(convert(&dir.path().join("missing"), &conv).is_err());
}
