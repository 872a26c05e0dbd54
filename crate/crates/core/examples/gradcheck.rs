//! Double-precision gradient check of the network against central
//! differences, with and without a frozen masking pattern.
//!
//! `cargo run --release --example gradcheck`

use lfm::masking::{FeatureBlock, LfmConfig};
use lfm::nn::{grad_check, MiniResNet, MiniResNetConfig, Mode, ParamSet};
use lfm::RngStream;

fn main() -> lfm::Result<()> {
    let mut r = RngStream::new(1);
    let x = FeatureBlock::<f64>::new((2, 3, 64, 32), (0..2 * 3 * 64 * 32).map(|_| r.unit()).collect())?;
    for lfm_enabled in [false, true] {
        let net = MiniResNet::new(MiniResNetConfig {
            num_classes: 5,
            lfm_enabled,
            lfm: LfmConfig { probability: 1.0, ..LfmConfig::for_channels(16) },
            ..MiniResNetConfig::default()
        })?;
        let params: ParamSet<f64> = net.init_params(&RngStream::new(2));
        let masks = net.forward(&params, &x, Mode::Train, &RngStream::new(3))?.decisions;
        let masks = lfm_enabled.then_some(masks.as_slice());
        let report = grad_check(&net, &params, &x, &[0, 3], &RngStream::new(4), masks, 100, 1e-3)?;
        println!(
            "masking {lfm_enabled}: {} entries, max rel error {:.2e}, {} kink retries, masked input grad max {}",
            report.checked, report.max_rel_error, report.kink_retries, report.masked_input_grad_max
        );
    }
    Ok(())
}
