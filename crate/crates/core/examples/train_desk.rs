//! Train one model on the synthetic desk dataset and report retrieval metrics.
//!
//! `cargo run --release --example train_desk -- [epochs] [lfm]`

use std::time::Instant;

use lfm::data::{synth_generate, SplitSpec};
use lfm::experiment::{classification_accuracy, retrieval_eval, train, ExperimentConfig, MethodFlags};

fn main() -> lfm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = ExperimentConfig::default();
    if let Some(e) = args.get(1) {
        cfg.train.epochs = e.parse().expect("epoch count");
    }
    let method = MethodFlags::parse(args.get(2).map(String::as_str).unwrap_or("baseline"))?;
    let d = &cfg.data;
    let ds = synth_generate(d.seed, d.n_identities, d.views, d.cams)?;
    let split = SplitSpec::new(&ds, d.train_identities)?;
    let t = Instant::now();
    let out = train(&cfg, method, &ds, &split, cfg.run.seed)?;
    for e in &out.log {
        println!("epoch {:2} loss {:.4} acc {:.4}", e.epoch, e.train_loss, e.train_acc);
    }
    println!("trained in {:.1}s", t.elapsed().as_secs_f64());
    let acc = classification_accuracy(&out.model, &ds, &split.train)?;
    let report = retrieval_eval(&out.model, &ds, &split.query, &split.gallery, cfg.distance()?, &cfg.eval_options())?;
    println!("eval-mode train acc {acc:.4}");
    println!("{}", lfm::metrics::EvalReport::CSV_HEADER);
    println!("{}", report.csv_row("model"));
    Ok(())
}
