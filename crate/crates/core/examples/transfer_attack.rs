//! Black-box transfer attack: queries perturbed with PGD on a surrogate
//! model, evaluated on a separately trained target.
//!
//! `cargo run --release --example transfer_attack -- [epochs]`

use lfm::attack::{transfer_evaluate, AttackConfig, AttackKind, RetrievalSet};
use lfm::data::{synth_generate, SplitSpec};
use lfm::experiment::{images_of, labels_of, train, ExperimentConfig, MethodFlags};

fn main() -> lfm::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = std::env::args().nth(1).map_or(8, |s| s.parse().expect("epoch count"));
    let ds = synth_generate(cfg.data.seed, cfg.data.n_identities, cfg.data.views, cfg.data.cams)?;
    let split = SplitSpec::new(&ds, cfg.data.train_identities)?;

    let target = train(&cfg, MethodFlags::parse("lfm")?, &ds, &split, 0)?.model;
    let surrogate = train(&cfg, MethodFlags::default(), &ds, &split, 1)?.model;
    let queries = RetrievalSet { images: images_of(&ds, &split.query)?, labels: labels_of(&ds, &split.query) };
    let gallery = RetrievalSet { images: images_of(&ds, &split.gallery)?, labels: labels_of(&ds, &split.gallery) };

    for kind in [AttackKind::TransferPgd, AttackKind::Gaussian] {
        let report = transfer_evaluate(
            "lfm-target",
            &target,
            &surrogate,
            &queries,
            &gallery,
            &AttackConfig::default(),
            kind,
            cfg.distance()?,
        )?;
        print!("{}", report.to_csv());
    }
    println!("target input-gradient calls: {}", target.input_grad_calls());
    Ok(())
}
