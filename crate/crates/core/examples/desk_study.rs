//! Paired baseline vs masking study: generalization and transfer-attack
//! robustness over several seeds on the synthetic desk dataset.
//!
//! `cargo run --release --example desk_study -- [n_seeds] [epochs]`

use lfm::data::{synth_generate, SplitSpec};
use lfm::experiment::{median, paired_study, ExperimentConfig, StudyArm};

fn main() -> lfm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: u64 = args.get(1).map_or(5, |s| s.parse().expect("seed count"));
    let mut cfg = ExperimentConfig::default();
    if let Some(e) = args.get(2) {
        cfg.train.epochs = e.parse().expect("epoch count");
    }
    let ds = synth_generate(cfg.data.seed, cfg.data.n_identities, cfg.data.views, cfg.data.cams)?;
    let split = SplitSpec::new(&ds, cfg.data.train_identities)?;
    let seeds: Vec<u64> = (0..n).collect();
    let study = paired_study(&cfg, &ds, &split, &seeds)?;
    print!("{}", study.to_csv(&seeds));

    let med = |arms: &[StudyArm], f: fn(&StudyArm) -> f64| median(&arms.iter().map(f).collect::<Vec<_>>());
    for (name, arms) in [("baseline", &study.baseline), ("lfm", &study.lfm)] {
        println!(
            "{name:>8}: median mAP {:.4}  median gap {:.4}  median attacked rank1 {:.4}",
            med(arms, |a| a.clean.map),
            med(arms, StudyArm::generalization_gap),
            med(arms, |a| a.attacked.rank1)
        );
    }
    let wins = study
        .baseline
        .iter()
        .zip(&study.lfm)
        .filter(|(b, l)| l.attacked.rank1 >= b.attacked.rank1)
        .count();
    println!("masking keeps attacked rank1 at least as high in {wins}/{n} pairs");
    Ok(())
}
