//! The comparison regularizers: cutout, spatial (channel) dropout and
//! element dropout.
//!
//! `cargo run --example baselines`

use lfm::masking::{channel_dropout_apply, cutout_apply, element_dropout_apply, FeatureBlock};
use lfm::RngStream;

fn main() -> lfm::Result<()> {
    let rng = RngStream::new(3);
    let images = FeatureBlock::<f32>::filled((2, 3, 16, 8), 1.0)?;

    let cut = cutout_apply(&images, 6, 0.0, &rng, true)?;
    println!("cutout, sample 0 (same square on every channel):");
    for row in cut.plane(0, 0).chunks(8) {
        println!("  {}", row.iter().map(|v| if *v == 0.0 { '#' } else { '.' }).collect::<String>());
    }

    let features = FeatureBlock::<f32>::filled((2, 8, 4, 4), 1.0)?;
    let dropped = channel_dropout_apply(&features, 0.5, &rng, true)?;
    for b in 0..2 {
        let kept: Vec<String> = (0..8).map(|c| format!("{}", dropped.plane(b, c)[0])).collect();
        println!("channel dropout q=0.5, sample {b}: {}", kept.join(" "));
    }

    let values = vec![1.0f32; 16];
    let out = element_dropout_apply(&values, 0.25, &rng, true)?;
    println!("element dropout q=0.25: {out:?}");
    Ok(())
}
