//! Dense-ANN multiply-accumulates versus spike-driven synaptic operations for
//! each memory variant at full size and at desk scale.

use memsnn::energy::{count_ann_macs, efficiency_report};
use memsnn::events::{synth_dataset, Dataset, Modality, SynthConfig};
use memsnn::memory::MemoryKind;
use memsnn::models::{build_model, Arch, ModelDims, ModelSpec};

fn main() -> memsnn::Result<()> {
    println!("full-size ANN MACs per sample:");
    for kind in MemoryKind::ALL {
        let v = count_ann_macs(&ModelSpec::new(Arch::Visual, kind), Modality::Visual);
        let a = count_ann_macs(&ModelSpec::new(Arch::Audio, kind), Modality::Audio);
        println!("  {} visual {v:>13}  audio {a:>13}", kind.model_id());
    }

    let data = Dataset::from_streams(&synth_dataset(&SynthConfig::spatial(4, 10, 1))?, 25, 4)?;
    println!("desk-scale visual models, untrained, on synthetic input:");
    for kind in MemoryKind::ALL {
        let spec = ModelSpec::new(Arch::Visual, kind)
            .with_dims(ModelDims::desk())
            .with_classes(4);
        let model = build_model(&spec, 1)?;
        let r = efficiency_report(&model, &data)?;
        println!(
            "  {} MACs {:>9}  SynOps {:>11.0}  dense {:>8.0}  sparsity {:.3}  ratio {}",
            kind.model_id(),
            r.ann_macs,
            r.snn_synops,
            r.snn_dense_macs,
            r.sparsity,
            r.efficiency_ratio.map_or("n/a".into(), |x| format!("{x:.1}x"))
        );
    }
    Ok(())
}
