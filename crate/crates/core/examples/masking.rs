//! Local feature masking on a small feature block, with the decision log.
//!
//! `cargo run --example masking`

use lfm::masking::{decision_log, lfm_apply, FeatureBlock, LfmConfig};
use lfm::RngStream;

fn main() -> lfm::Result<()> {
    // 4 samples, 8 channels of 16x8 maps, all set to a sentinel outside [0, 1)
    let block = FeatureBlock::<f32>::filled((4, 8, 16, 8), 2.0)?;
    let cfg = LfmConfig {
        probability: 0.5,
        ..LfmConfig::for_channels(8)
    };
    let (masked, decisions) = lfm_apply(&block, &cfg, &RngStream::new(7), true)?;
    print!("{}", decision_log(&decisions));

    for d in decisions.iter().filter(|d| d.applied).take(1) {
        let (c, _) = d.rects[0];
        println!("sample {} channel {c}:", d.sample_id);
        let plane = masked.plane(d.sample_id, c);
        for row in plane.chunks(8) {
            let line: String = row.iter().map(|v| if *v == 2.0 { '.' } else { '#' }).collect();
            println!("  {line}");
        }
    }

    let (same, _) = lfm_apply(&block, &cfg, &RngStream::new(7), false)?;
    println!("eval mode leaves the block unchanged: {}", same == block);
    Ok(())
}
