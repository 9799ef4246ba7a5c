use super::*;
use crate::events::{Modality, SpikeTensor};
use crate::memory::MemoryKind;
use crate::rng::rng;
use rand::Rng as _;

fn desk(arch: Arch, memory: MemoryKind) -> ModelSpec {
    ModelSpec::new(arch, memory)
        .with_dims(ModelDims::desk())
        .with_classes(4)
}

fn random_input(shape: &[usize], density: f64, seed: u64) -> SpikeTensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| u8::from(r.random::<f64>() < density)).collect();
    SpikeTensor::from_vec(shape, data).unwrap()
}

fn visual_input(seed: u64) -> SpikeTensor {
    random_input(&[25, 2, 16, 16], 0.15, seed)
}

fn audio_input(seed: u64) -> SpikeTensor {
    random_input(&[100, 64], 0.1, seed)
}

#[test]
fn visual_parameter_count_matches_closed_form() {
    let model = build_model(&ModelSpec::new(Arch::Visual, MemoryKind::None), 0).unwrap();
    // 34 -> pool -> 17 -> pool -> 8
    let conv1 = 64 * 2 * 3 * 3 + 64;
    let conv2 = 128 * 64 * 3 * 3 + 128;
    let fc = 128 * 8 * 8 * 512 + 512;
    let head = 512 * 10 + 10;
    assert_eq!(model.params.numel(), conv1 + conv2 + fc + head);
}

#[test]
fn audio_parameter_counts_match_closed_form() {
    let base = 700 * 1024 + 1024 + 1024 * 1024 + 1024 + 1024 * 512 + 512 + 512 * 10 + 10;
    let hgrn = 3 * 512 * 512 + 2 * 512;
    let hop = 256 * 512;
    for (kind, extra) in [
        (MemoryKind::None, 0),
        (MemoryKind::Scl, 0),
        (MemoryKind::Hopfield, hop),
        (MemoryKind::Hgrn, hgrn),
        (MemoryKind::Hybrid, hgrn + hop),
    ] {
        let model = build_model(&ModelSpec::new(Arch::Audio, kind), 0).unwrap();
        assert_eq!(model.params.numel(), base + extra, "{kind}");
    }
}

#[test]
fn audio_hopfield_has_full_size_pattern_matrix() {
    let model = build_model(&ModelSpec::new(Arch::Audio, MemoryKind::Hopfield), 1).unwrap();
    let p = model.params.by_name("memory.hopfield.patterns").unwrap();
    assert_eq!(p.shape(), &[256, 512]);
}

#[test]
fn same_seed_same_parameters() {
    let spec = desk(Arch::Visual, MemoryKind::Hybrid);
    let a = build_model(&spec, 9).unwrap();
    let b = build_model(&spec, 9).unwrap();
    let c = build_model(&spec, 10).unwrap();
    assert_eq!(a.params.tensors(), b.params.tensors());
    assert_ne!(a.params.tensors(), c.params.tensors());
}

#[test]
fn zero_input_gives_tied_logits() {
    for kind in [MemoryKind::None, MemoryKind::Scl, MemoryKind::Hgrn] {
        let model = build_model(&desk(Arch::Visual, kind), 3).unwrap();
        let out = model.forward(&SpikeTensor::zeros(&[25, 2, 16, 16])).unwrap();
        let first = out.logits.data()[0];
        assert!(out.logits.data().iter().all(|&v| v == first), "{kind}");
        assert_eq!(
            model
                .predict(&SpikeTensor::zeros(&[25, 2, 16, 16]), Modality::Visual)
                .unwrap(),
            0
        );
    }
}

#[test]
fn hgrn_trace_depends_on_time_order() {
    let model = build_model(&desk(Arch::Audio, MemoryKind::Hgrn), 4).unwrap();
    let x = audio_input(5);
    let fwd = model.forward(&x).unwrap();
    let rev = model.forward(&x.time_reversed()).unwrap();
    assert_ne!(fwd.memory, rev.memory);
}

#[test]
fn memory_only_changes_downstream_of_features() {
    let x = visual_input(6);
    let none = build_model(&desk(Arch::Visual, MemoryKind::None), 7).unwrap();
    let hop = build_model(&desk(Arch::Visual, MemoryKind::Hopfield), 7).unwrap();
    let a = none.forward(&x).unwrap();
    let b = hop.forward(&x).unwrap();
    assert!(a.features.sum() > 0.0, "features should not be silent");
    assert_eq!(a.features, b.features);
    assert_ne!(a.memory, b.memory);
    assert_ne!(a.logits, b.logits);
}

#[test]
fn feature_trace_binary_memory_trace_real() {
    let x = visual_input(8);
    let none = build_model(&desk(Arch::Visual, MemoryKind::None), 1)
        .unwrap()
        .forward(&x)
        .unwrap();
    assert!(none.features.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(none.features, none.memory);
    let hgrn = build_model(&desk(Arch::Visual, MemoryKind::Hgrn), 1)
        .unwrap()
        .forward(&x)
        .unwrap();
    assert!(hgrn.features.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(hgrn.memory.data().iter().any(|&v| v != 0.0 && v != 1.0));
}

#[test]
fn dual_shares_one_head_and_trunk() {
    let model = build_model(&desk(Arch::Dual, MemoryKind::Hgrn), 2).unwrap();
    let names: Vec<&str> = model.params.iter().map(|(_, n, _)| n).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("head.")).count(), 2);
    assert_eq!(names.iter().filter(|n| n.starts_with("memory.hgrn.")).count(), 5);
    assert!(names.iter().any(|n| n.starts_with("visual.")));
    assert!(names.iter().any(|n| n.starts_with("audio.")));

    // Both paths send gradient into the same head tensors.
    for (tag, x) in [
        (Modality::Visual, visual_input(1)),
        (Modality::Audio, audio_input(1)),
    ] {
        let mut g = crate::kernel::Graph::new();
        let bound = model.params.bind(&mut g);
        let trace = model.forward_graph(&mut g, &bound, tag, &[&x]).unwrap();
        let loss = g.cross_entropy(trace.logits, &[1]).unwrap();
        let grads = g.backward(loss).unwrap();
        let (hw, _) = model.head_ids();
        assert!(grads.get(bound[hw.0]).is_some());
        let other = if tag == Modality::Visual {
            "audio."
        } else {
            "visual."
        };
        for id in model.param_ids(other) {
            assert!(grads.get(bound[id.0]).is_none(), "{tag} reached {other}");
        }
    }
}

#[test]
fn dual_visual_path_equals_parallel_model_at_init() {
    let dual = build_model(&desk(Arch::Dual, MemoryKind::Hgrn), 11).unwrap();
    let vis = build_model(&desk(Arch::Visual, MemoryKind::Hgrn), 11).unwrap();
    let aud = build_model(&desk(Arch::Audio, MemoryKind::Hgrn), 11).unwrap();
    let x = visual_input(2);
    assert_eq!(
        dual.forward_dual(&x, Modality::Visual).unwrap(),
        vis.forward(&x).unwrap()
    );
    let y = audio_input(2);
    assert_eq!(
        dual.forward_dual(&y, Modality::Audio).unwrap(),
        aud.forward(&y).unwrap()
    );
}

#[test]
fn activity_matches_static_layer_plan() {
    for arch in [Arch::Visual, Arch::Audio] {
        for kind in MemoryKind::ALL {
            let spec = desk(arch, kind);
            let model = build_model(&spec, 0).unwrap();
            let m = arch.modalities()[0];
            let x = if m == Modality::Visual {
                visual_input(0)
            } else {
                audio_input(0)
            };
            let out = model.forward(&x).unwrap();
            let plan = synaptic_layers(&spec, m);
            let seen: Vec<(String, u64, u64)> = out
                .activity
                .synapses
                .iter()
                .map(|s| (s.layer.clone(), s.macs_per_step, s.fan_out))
                .collect();
            let want: Vec<(String, u64, u64)> = plan
                .iter()
                .map(|l| (l.name.clone(), l.macs_per_step, l.fan_out))
                .collect();
            assert_eq!(seen, want, "{arch} {kind}");
        }
    }
}

#[test]
fn invalid_specs_and_inputs_rejected() {
    let err = build_model(&desk(Arch::Dual, MemoryKind::None), 0).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let model = build_model(&desk(Arch::Visual, MemoryKind::None), 0).unwrap();
    assert!(matches!(
        model.forward(&audio_input(0)),
        Err(crate::Error::Shape(_))
    ));
    assert!(model.forward_dual(&visual_input(0), Modality::Visual).is_err());
    let dual = build_model(&desk(Arch::Dual, MemoryKind::Hgrn), 0).unwrap();
    assert!(dual.forward(&visual_input(0)).is_err());
    assert!(dual.forward_dual(&visual_input(0), Modality::Audio).is_err());
}
