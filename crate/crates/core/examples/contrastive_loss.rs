//! Supervised contrastive loss on clustered versus scrambled embeddings.

use memsnn::kernel::Tensor;
use memsnn::memory::{scl_loss, SCLConfig};
use memsnn::rng::rng;
use rand_distr::{Distribution, Normal};

fn main() -> memsnn::Result<()> {
    let (classes, per_class, d) = (4, 8, 16);
    let mut r = rng(3);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            rows.extend((0..d).map(|k| f64::from(u8::from(k % classes == c)) + noise.sample(&mut r)));
            labels.push(c);
        }
    }
    let z = Tensor::new(&[classes * per_class, d], rows)?;
    let cfg = SCLConfig::default();
    println!("clustered: {:.4}", scl_loss(&z, &labels, &cfg)?);
    let scrambled: Vec<usize> = (0..labels.len()).map(|i| (i * 7) % classes).collect();
    println!("scrambled: {:.4}", scl_loss(&z, &scrambled, &cfg)?);
    Ok(())
}
