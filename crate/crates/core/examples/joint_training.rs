//! One dual-encoder model trained on spatial and temporal streams at once,
//! alternating a visual and an audio batch per step.

use memsnn::events::{synth_dataset, Dataset, SynthConfig};
use memsnn::memory::MemoryKind;
use memsnn::models::{build_model, Arch, ModelDims, ModelSpec};
use memsnn::train::{evaluate, joint_epoch, OptimState, TrainConfig};

fn split(cfg: SynthConfig, bins: usize) -> memsnn::Result<(Dataset, Dataset)> {
    Dataset::from_streams(&synth_dataset(&cfg)?, bins, 4)?.split(0.2, 0)
}

fn main() -> memsnn::Result<()> {
    let dims = ModelDims::desk();
    let (vis_train, vis_test) = split(SynthConfig::spatial(4, 200, 1), dims.visual_bins)?;
    // Half as many audio samples: the smaller stream is recycled within an epoch.
    let (aud_train, aud_test) = split(SynthConfig::temporal(4, 100, 2), dims.audio_bins)?;

    let spec = ModelSpec::new(Arch::Dual, MemoryKind::Hgrn)
        .with_dims(dims)
        .with_classes(4);
    let mut model = build_model(&spec, 5)?;
    let cfg = TrainConfig {
        seed: 5,
        epochs: 3,
        ..Default::default()
    };
    let mut st = OptimState::new(&model.params);
    for epoch in 0..cfg.epochs {
        let m = joint_epoch(
            &mut model,
            Some(&vis_train),
            Some(&aud_train),
            &cfg,
            &mut st,
            epoch,
        )?;
        let (v, a) = (m.visual.unwrap(), m.audio.unwrap());
        println!(
            "epoch {epoch}: visual loss {:.3}, audio loss {:.3}",
            v.loss, a.loss
        );
    }
    let v = evaluate(&model, &vis_test)?.accuracy;
    let a = evaluate(&model, &aud_test)?.accuracy;
    println!(
        "test accuracy: visual {:.1}%, audio {:.1}%, mean {:.1}%",
        100.0 * v,
        100.0 * a,
        50.0 * (v + a)
    );
    Ok(())
}
