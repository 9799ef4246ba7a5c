//! Feed a pulse through a gated recurrent cell and watch how long it lingers
//! for different gate biases.

use memsnn::kernel::Tensor;
use memsnn::memory::{hgrn_step, HGRNCell};
use memsnn::rng::rng;

fn main() -> memsnn::Result<()> {
    let (input, hidden) = (4, 3);
    let base = HGRNCell::new(input, hidden, &mut rng(2));
    for bias in [-4.0, 0.0, 4.0] {
        let cell = HGRNCell {
            b_r: Tensor::full(&[hidden], bias),
            ..base.clone()
        };
        let mut h = Tensor::zeros(&[1, hidden]);
        let mut norms = Vec::new();
        for t in 0..8 {
            let x = if t == 0 {
                Tensor::full(&[1, input], 1.0)
            } else {
                Tensor::zeros(&[1, input])
            };
            h = hgrn_step(&x, &h, &cell)?;
            norms.push(format!(
                "{:.3}",
                h.data().iter().map(|v| v * v).sum::<f64>().sqrt()
            ));
        }
        println!("gate bias {bias:+.0}: |h| = {}", norms.join(" "));
    }
    Ok(())
}
