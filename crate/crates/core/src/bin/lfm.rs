use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lfm::experiment::{
    cmd_attack, cmd_compare, cmd_eval, cmd_gen_data, cmd_sweep, cmd_train, cmd_viz_masks, ExperimentConfig, SweepSpec,
};

#[derive(Parser)]
#[command(name = "lfm", version, about = "Local feature masking experiments on synthetic re-identification data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`[section]` / `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides `[run] out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra overrides as `section.key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and manifest.
    GenData,
    /// Train one method, e.g. `baseline`, `lfm`, `lfm+cutout+dropout`.
    Train {
        #[arg(long, default_value = "baseline")]
        method: String,
        /// Checkpoint name (defaults to the method).
        #[arg(long)]
        name: Option<String>,
    },
    /// Retrieval metrics for a checkpoint.
    Eval { checkpoint: PathBuf },
    /// Transfer attack from a surrogate onto a target.
    Attack {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        surrogate: PathBuf,
    },
    /// Parameter sweep; flags override the `[sweep]` section.
    Sweep {
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        plot: bool,
    },
    /// Train and evaluate every method in `[run] methods`.
    Compare,
    /// Stem feature maps of one sample before and after masking.
    VizMasks {
        checkpoint: PathBuf,
        #[arg(long)]
        index: usize,
    },
}

fn load_config(common: &Common) -> lfm::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for item in &common.set {
        let Some((key, value)) = item.split_once('=') else {
            return Err(lfm::Error::InvalidConfig(format!("override {item:?} is not key=value")));
        };
        cfg = cfg.set_path(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.out = out.clone();
    }
    Ok(cfg)
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn run(cli: Cli) -> lfm::Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::GenData => {
            let out = cmd_gen_data(&cfg)?;
            println!("{} samples -> {}", out.n_samples, out.dataset.display());
        }
        Command::Train { method, name } => {
            let out = cmd_train(&cfg, &method, name.as_deref())?;
            println!("{}", out.checkpoint.display());
        }
        Command::Eval { checkpoint } => {
            let (path, _) = cmd_eval(&cfg, &checkpoint)?;
            print!("{}", std::fs::read_to_string(&path).map_err(|e| lfm::Error::Io {
                path: path.display().to_string(),
                source: e,
            })?);
        }
        Command::Attack { target, surrogate } => {
            let (_, report) = cmd_attack(&cfg, &target, &surrogate)?;
            print!("{}", report.to_csv());
        }
        Command::Sweep {
            param,
            values,
            seeds,
            plot,
        } => {
            let mut spec = SweepSpec::from_config(&cfg);
            if let Some(p) = param {
                spec.param = p;
            }
            if !values.is_empty() {
                spec.values = values.iter().map(|v| parse_value(v)).collect();
            }
            if !seeds.is_empty() {
                spec.seeds = seeds;
            }
            let out = cmd_sweep(&cfg, &spec, plot || cfg.sweep.plot)?;
            println!("{} (best value {})", out.csv.display(), out.best_value);
        }
        Command::Compare => {
            let (path, _) = cmd_compare(&cfg)?;
            println!("{}", path.display());
        }
        Command::VizMasks { checkpoint, index } => {
            let out = cmd_viz_masks(&cfg, &checkpoint, index)?;
            println!("{}", out.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
