use super::*;
use crate::events::{synth_dataset, Sample, SynthConfig};
use crate::memory::MemoryKind;
use crate::models::{build_model, Arch, ModelDims, ModelSpec};

fn spec(arch: Arch, memory: MemoryKind) -> ModelSpec {
    ModelSpec::new(arch, memory)
        .with_dims(ModelDims::desk())
        .with_classes(4)
}

fn spatial(per_class: usize, seed: u64) -> Dataset {
    let streams = synth_dataset(&SynthConfig::spatial(4, per_class, seed)).unwrap();
    Dataset::from_streams(&streams, 25, 4).unwrap()
}

fn temporal(per_class: usize, seed: u64) -> Dataset {
    let streams = synth_dataset(&SynthConfig::temporal(4, per_class, seed)).unwrap();
    Dataset::from_streams(&streams, 100, 4).unwrap()
}

#[test]
fn zero_lr_keeps_parameters_and_initial_loss() {
    let data = spatial(8, 1);
    let mut model = build_model(&spec(Arch::Visual, MemoryKind::None), 2).unwrap();
    let before = model.params.tensors().to_vec();
    let initial = evaluate(&model, &data).unwrap().loss;
    let cfg = TrainConfig {
        optim: AdamWConfig {
            lr: 0.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut st = OptimState::new(&model.params);
    let m = train_epoch(&mut model, &data, &cfg, &mut st, 0).unwrap();
    assert_eq!(model.params.tensors(), &before[..]);
    assert!((m.loss - initial).abs() < 1e-9, "{} vs {initial}", m.loss);
    assert_eq!(m.updates, 1);
}

#[test]
fn fixed_seed_reproduces_losses() {
    let data = spatial(10, 3);
    let run = || {
        let mut model = build_model(&spec(Arch::Visual, MemoryKind::Hybrid), 4).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        let mut st = OptimState::new(&model.params);
        let losses: Vec<f64> = (0..2)
            .map(|e| train_epoch(&mut model, &data, &cfg, &mut st, e).unwrap().loss)
            .collect();
        (losses, model.params.tensors().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_dataset_rejected() {
    let mut model = build_model(&spec(Arch::Visual, MemoryKind::None), 0).unwrap();
    let empty = Dataset {
        modality: Modality::Visual,
        num_classes: 4,
        samples: vec![],
    };
    let mut st = OptimState::new(&model.params);
    let err = train_epoch(&mut model, &empty, &TrainConfig::default(), &mut st, 0).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(evaluate(&model, &empty).is_err());
}

#[test]
fn visual_update_leaves_audio_encoder_untouched() {
    let vis = spatial(4, 1);
    let mut model = build_model(&spec(Arch::Dual, MemoryKind::Hgrn), 0).unwrap();
    let audio_ids = model.param_ids("audio.");
    let trunk_ids = model.param_ids("memory.hgrn.");
    let before = model.params.tensors().to_vec();
    let mut st = OptimState::new(&model.params);
    let batch: Vec<_> = vis.samples.iter().map(|s| (&s.input, s.label)).collect();
    train_step(
        &mut model,
        Modality::Visual,
        &batch,
        &TrainConfig::default(),
        &mut st,
    )
    .unwrap();
    for id in audio_ids {
        assert_eq!(model.params.get(id), &before[id.0]);
    }
    assert!(trunk_ids.iter().any(|id| model.params.get(*id) != &before[id.0]));
}

#[test]
fn joint_epoch_recycles_smaller_stream() {
    // 64 visual and 32 audio samples with batch 32: two updates each.
    let vis = spatial(16, 1);
    let aud = temporal(8, 1);
    let mut model = build_model(&spec(Arch::Dual, MemoryKind::Hgrn), 0).unwrap();
    let mut st = OptimState::new(&model.params);
    let m = joint_epoch(
        &mut model,
        Some(&vis),
        Some(&aud),
        &TrainConfig::default(),
        &mut st,
        0,
    )
    .unwrap();
    assert_eq!(m.visual.as_ref().unwrap().updates, 2);
    assert_eq!(m.audio.as_ref().unwrap().updates, 2);
    assert_eq!(m.audio.as_ref().unwrap().samples, 64);
    assert_eq!(st.step, 4);
}

#[test]
fn disabled_audio_stream_reduces_to_visual_training() {
    let vis = spatial(12, 2);
    let cfg = TrainConfig {
        batch_size: 16,
        seed: 3,
        ..Default::default()
    };
    let mut dual = build_model(&spec(Arch::Dual, MemoryKind::Hgrn), 6).unwrap();
    let mut single = build_model(&spec(Arch::Visual, MemoryKind::Hgrn), 6).unwrap();
    let mut st_d = OptimState::new(&dual.params);
    let mut st_s = OptimState::new(&single.params);
    for e in 0..2 {
        let a = joint_epoch(&mut dual, Some(&vis), None, &cfg, &mut st_d, e).unwrap();
        let b = train_epoch(&mut single, &vis, &cfg, &mut st_s, e).unwrap();
        assert_eq!(a.visual.unwrap(), b);
        assert!(a.audio.is_none());
    }
}

#[test]
fn joint_step_needs_both_batches() {
    let vis = spatial(2, 1);
    let mut model = build_model(&spec(Arch::Dual, MemoryKind::Hgrn), 0).unwrap();
    let mut st = OptimState::new(&model.params);
    let batch: Vec<_> = vis.samples.iter().map(|s| (&s.input, s.label)).collect();
    let err = joint_train_step(&mut model, &batch, &[], &TrainConfig::default(), &mut st).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn constant_predictor_scores_chance_and_confusion_adds_up() {
    // Zero input ties every logit, so the model predicts class 0 everywhere.
    let model = build_model(&spec(Arch::Visual, MemoryKind::None), 0).unwrap();
    let samples = (0..40)
        .map(|i| Sample {
            input: SpikeTensor::zeros(&[25, 2, 16, 16]),
            label: i % 4,
        })
        .collect();
    let data = Dataset {
        modality: Modality::Visual,
        num_classes: 4,
        samples,
    };
    let m = evaluate(&model, &data).unwrap();
    assert!((m.accuracy - 0.25).abs() < 1e-12);
    assert_eq!(m.sparsity, 1.0);
    for (c, row) in m.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), data.class_counts()[c]);
        assert_eq!(row[0], 10);
    }
}

#[test]
fn accuracy_matches_per_sample_recount() {
    let data = spatial(6, 9);
    let model = build_model(&spec(Arch::Visual, MemoryKind::Hopfield), 1).unwrap();
    let m = evaluate(&model, &data).unwrap();
    let correct = data
        .samples
        .iter()
        .filter(|s| model.predict(&s.input, Modality::Visual).unwrap() == s.label)
        .count();
    assert_eq!(m.accuracy, correct as f64 / data.len() as f64);
}

#[test]
fn metrics_lines_are_json() {
    let mut buf = Vec::new();
    let rec = MetricsRecord {
        epoch: 1,
        split: "train".into(),
        loss: 0.5,
        acc: 0.75,
        sparsity: 0.9,
    };
    write_metrics_line(&mut buf, &rec).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.ends_with('\n'));
    let back: MetricsRecord = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(back, rec);
}
