//! Finite-difference check of a whole model's training loss with smooth
//! spikes.

use memsnn::events::SpikeTensor;
use memsnn::kernel::{grad_check_many, GradCheckOptions, SpikeMode};
use memsnn::memory::MemoryKind;
use memsnn::models::{build_model, Arch, ModelDims, ModelSpec};
use memsnn::train::loss_graph;

fn main() -> memsnn::Result<()> {
    let dims = ModelDims {
        audio_input: 6,
        audio_bins: 4,
        hidden1: 5,
        hidden2: 5,
        feature: 4,
        patterns: 3,
        ..ModelDims::desk()
    };
    for kind in MemoryKind::ALL {
        let mut spec = ModelSpec::new(Arch::Audio, kind).with_dims(dims).with_classes(2);
        spec.neuron.mode = SpikeMode::Soft;
        let model = build_model(&spec, 11)?;
        let xs: Vec<SpikeTensor> = (0..4u8)
            .map(|s| {
                SpikeTensor::from_vec(
                    &[4, 6],
                    (0..24u8).map(|i| u8::from((i * 7 + s) % 3 == 0)).collect(),
                )
            })
            .collect::<memsnn::Result<_>>()?;
        let inputs: Vec<&SpikeTensor> = xs.iter().collect();
        let labels = [0, 1, 0, 1];
        let report = grad_check_many(
            |g, vars| Ok(loss_graph(&model, g, vars, memsnn::events::Modality::Audio, &inputs, &labels)?.0),
            model.params.tensors(),
            &GradCheckOptions {
                eps: 1e-5,
                ..Default::default()
            },
        )?;
        println!(
            "{kind:<9} {} coordinates, max relative error {:.2e} {}",
            report.checked,
            report.max_rel_error,
            if report.passed() { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
