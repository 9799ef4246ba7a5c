//! Decode raw N-MNIST records, store them as EVT and bin them into frames.

use memsnn::events::{bin_events, parse_nmnist_bin, read_evt, remap_label, write_evt, Geometry};

fn main() -> memsnn::Result<()> {
    // x, y, then polarity in the top bit and a 23-bit timestamp.
    let raw = [
        0x05, 0x0A, 0x80, 0x00, 0x01, //
        0x06, 0x0A, 0x00, 0x00, 0x30, //
        0x21, 0x00, 0x80, 0x00, 0x63,
    ];
    let stream = parse_nmnist_bin(&raw, Geometry::nmnist(), 7)?;
    for e in stream.events() {
        println!("t={:>3}us x={:>2} y={:>2} p={}", e.t, e.x, e.y, e.p);
    }

    let bytes = write_evt(&stream);
    let back = read_evt(&bytes)?;
    assert_eq!(back, stream);
    println!("EVT container: {} bytes", bytes.len());

    let frames = bin_events(&stream, 4, None)?;
    for t in 0..frames.timesteps() {
        println!(
            "bin {t}: {} active cells",
            frames.frame(t).iter().filter(|&&v| v > 0).count()
        );
    }

    // SHD has 20 classes; both modalities share a 10-class label space.
    println!("SHD label 13 -> {}", remap_label(13, 10));
    Ok(())
}
