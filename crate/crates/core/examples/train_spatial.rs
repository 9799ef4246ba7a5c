//! Train one memory variant on the synthetic spatial task.
//!
//! `cargo run --release --example train_spatial -- hopfield`

use memsnn::events::{synth_dataset, Dataset, SynthConfig};
use memsnn::memory::MemoryKind;
use memsnn::models::{build_model, Arch, ModelDims, ModelSpec};
use memsnn::train::{evaluate, train_epoch, OptimState, TrainConfig};

fn main() -> memsnn::Result<()> {
    let kind: MemoryKind = std::env::args().nth(1).as_deref().unwrap_or("hopfield").parse()?;
    let all = Dataset::from_streams(&synth_dataset(&SynthConfig::spatial(4, 200, 1))?, 25, 4)?;
    let (train, test) = all.split(0.2, 0)?;

    let spec = ModelSpec::new(Arch::Visual, kind)
        .with_dims(ModelDims::desk())
        .with_classes(4);
    let mut model = build_model(&spec, 7)?;
    println!(
        "{} ({kind}): {} parameters",
        kind.model_id(),
        model.params.numel()
    );
    let cfg = TrainConfig {
        seed: 7,
        ..Default::default()
    };
    let mut st = OptimState::new(&model.params);
    for epoch in 0..cfg.epochs {
        let m = train_epoch(&mut model, &train, &cfg, &mut st, epoch)?;
        let ev = evaluate(&model, &test)?;
        println!(
            "epoch {epoch}: loss {:.3} train {:.1}% test {:.1}% sparsity {:.3}",
            m.loss,
            100.0 * m.accuracy,
            100.0 * ev.accuracy,
            ev.sparsity
        );
    }
    Ok(())
}
