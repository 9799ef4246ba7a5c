//! Recall a stored pattern from a corrupted cue with a modern Hopfield layer.

use memsnn::kernel::Tensor;
use memsnn::memory::{hopfield_energy, hopfield_retrieve, HopfieldMemory};
use memsnn::rng::rng;
use rand::Rng as _;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn main() -> memsnn::Result<()> {
    let (n, d) = (16, 64);
    let mut r = rng(1);
    let data: Vec<f64> = (0..n * d)
        .map(|_| if r.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mem = HopfieldMemory::from_patterns(Tensor::new(&[n, d], data.clone())?, 0.25, 1)?;
    let target = &data[3 * d..4 * d];

    // Flip a third of the signs.
    let cue: Vec<f64> = target
        .iter()
        .map(|&v| if r.random::<f64>() < 0.33 { -v } else { v })
        .collect();
    let mut xi = Tensor::new(&[1, d], cue)?;
    for it in 0..4 {
        let e = hopfield_energy(xi.data(), &mem)?;
        println!(
            "iter {it}: cosine {:.3}  energy {:.3}",
            cosine(xi.data(), target),
            e.modern
        );
        xi = hopfield_retrieve(&xi, &mem)?;
    }
    Ok(())
}
