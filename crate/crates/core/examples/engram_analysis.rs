//! Cluster quality, dimensionality and cross-modal structure of the feature
//! layer of a dual model, before and after training.

use memsnn::engram::{analyze, cross_modal_alignment, rate_features, zero_shot_transfer, ProbeConfig};
use memsnn::events::{synth_dataset, Dataset, SynthConfig};
use memsnn::memory::MemoryKind;
use memsnn::models::{build_model, Arch, Model, ModelDims, ModelSpec};
use memsnn::train::{joint_epoch, OptimState, TrainConfig};

fn report(model: &Model, vis: &Dataset, aud: &Dataset) -> memsnn::Result<()> {
    let fv = rate_features(model, vis, 30, 0)?;
    let fa = rate_features(model, aud, 30, 0)?;
    for f in [&fv, &fa] {
        let r = analyze("M4", f)?;
        println!(
            "  {:<6} silhouette {:+.3}  DB {}  eff. dim {:.3}",
            r.modality,
            r.silhouette,
            r.davies_bouldin.map_or("inf".into(), |v| format!("{v:.3}")),
            r.effective_dim_fraction
        );
    }
    let align = cross_modal_alignment(&fv, &fa)?;
    let transfer = zero_shot_transfer(&fv, &fa, &ProbeConfig::default())?;
    println!(
        "  alignment {:.3}, visual->audio transfer {:.1}%",
        align.mean_diag,
        100.0 * transfer
    );
    Ok(())
}

fn main() -> memsnn::Result<()> {
    let dims = ModelDims::desk();
    let vis = Dataset::from_streams(
        &synth_dataset(&SynthConfig::spatial(4, 60, 1))?,
        dims.visual_bins,
        4,
    )?;
    let aud = Dataset::from_streams(
        &synth_dataset(&SynthConfig::temporal(4, 60, 2))?,
        dims.audio_bins,
        4,
    )?;
    let spec = ModelSpec::new(Arch::Dual, MemoryKind::Hgrn)
        .with_dims(dims)
        .with_classes(4);
    let mut model = build_model(&spec, 3)?;

    println!("untrained:");
    report(&model, &vis, &aud)?;
    let cfg = TrainConfig {
        seed: 3,
        epochs: 3,
        ..Default::default()
    };
    let mut st = OptimState::new(&model.params);
    for epoch in 0..cfg.epochs {
        joint_epoch(&mut model, Some(&vis), Some(&aud), &cfg, &mut st, epoch)?;
    }
    println!("after {} joint epochs:", cfg.epochs);
    report(&model, &vis, &aud)
}
