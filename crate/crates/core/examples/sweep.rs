//! A small masking-probability sweep through the command layer, writing
//! the sweep CSV, its per-value summary and a line plot.
//!
//! `cargo run --release --example sweep -- [out_dir]`

use std::path::PathBuf;

use lfm::experiment::{cmd_gen_data, cmd_sweep, ExperimentConfig, SweepSpec};

fn main() -> lfm::Result<()> {
    let mut cfg = ExperimentConfig::from_toml_str(
        "[data]\nn_identities = 20\ntrain_identities = 12\nviews = 4\n\
         [lfm]\nenabled = true\n\
         [train]\nepochs = 4\n",
    )?;
    cfg.run.out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sweep_out".into()));
    cmd_gen_data(&cfg)?;
    let spec = SweepSpec {
        param: "lfm.probability".into(),
        values: [0.05, 0.15, 0.3].map(toml::Value::Float).to_vec(),
        seeds: vec![0, 1],
    };
    let out = cmd_sweep(&cfg, &spec, true)?;
    print!("{}", std::fs::read_to_string(&out.summary).map_err(|e| lfm::Error::Io {
        path: out.summary.display().to_string(),
        source: e,
    })?);
    println!("best value {}; plot {}", out.best_value, out.plot.expect("plot requested").display());
    Ok(())
}
