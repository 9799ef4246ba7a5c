//! A single LIF neuron driven by a constant current.

use memsnn::kernel::Tensor;
use memsnn::snn::{lif_step, LifParams, LifState};

fn main() -> memsnn::Result<()> {
    let p = LifParams {
        tau_m: 4.0,
        ..Default::default()
    };
    for current in [0.8, 1.2, 2.0] {
        let mut state = LifState::at_rest(&[1], &p);
        let input = Tensor::full(&[1], current);
        let mut train = String::new();
        for _ in 0..40 {
            let (spikes, next) = lif_step(&state, &input, &p)?;
            train.push(if spikes.item() > 0.0 { '|' } else { '.' });
            state = next;
        }
        println!("i={current:.1}  {train}");
    }
    Ok(())
}
