//! The experiment commands. Each writes its outputs under `[run] out` while
//! holding that directory's lock file.

use std::fs::{self, File, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::attack::{transfer_evaluate, AttackKind, AttackReport, RetrievalSet};
use crate::data::{load_dataset, save_dataset, synth_generate, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::masking::{decision_log, lfm_apply, FeatureBlock};
use crate::metrics::EvalReport;
use crate::nn::{load_checkpoint, save_checkpoint, MiniResNet, Model};
use crate::rng::RngStream;

use super::config::{ExperimentConfig, MethodFlags};
use super::train::{images_of, labels_of, retrieval_eval, train, train_log_csv};

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub const FILE_NAME: &'static str = ".lfm.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::FILE_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                std::io::Error::new(ErrorKind::AlreadyExists, "output directory is locked by another run"),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn dataset_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run.out.join("data").join("dataset.lfmd")
}

pub fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run.out.join("data").join("manifest.csv")
}

pub fn checkpoint_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.run.out.join(format!("{name}.lfmc"))
}

/// Dataset files from the output directory plus the configured split.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, SplitSpec)> {
    let ds = load_dataset(&dataset_path(cfg))?;
    let split = SplitSpec::new(&ds, cfg.data.train_identities)?;
    Ok((ds, split))
}

/// Model for a checkpoint file, with the architecture taken from `cfg`.
pub fn load_model(cfg: &ExperimentConfig, split: &SplitSpec, path: &Path) -> Result<Model<f32>> {
    let params = load_checkpoint(path)?;
    let net = MiniResNet::new(cfg.model_config(MethodFlags::default(), split.num_classes())?)?;
    Model::new(net, params)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenDataOutput {
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub n_samples: usize,
}

/// Generate the synthetic dataset and its manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenDataOutput> {
    let _lock = OutputLock::acquire(&cfg.run.out)?;
    let d = &cfg.data;
    let ds = synth_generate(d.seed, d.n_identities, d.views, d.cams)?;
    let split = SplitSpec::new(&ds, d.train_identities)?;
    let (dataset, manifest) = (dataset_path(cfg), manifest_path(cfg));
    if let Some(parent) = dataset.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_dataset(&ds, &dataset)?;
    write_file(&manifest, split.manifest_csv(&ds))?;
    Ok(GenDataOutput {
        dataset,
        manifest,
        n_samples: ds.samples.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_train_acc: Option<f64>,
}

/// Train `method` (e.g. `"lfm+cutout"`) with the run seed and save the
/// checkpoint as `<name>.lfmc` plus the per-epoch log `<name>_train.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, method: &str, name: Option<&str>) -> Result<TrainOutput> {
    let flags = MethodFlags::parse(method)?;
    let (ds, split) = load_data(cfg)?;
    let _lock = OutputLock::acquire(&cfg.run.out)?;
    let outcome = train(cfg, flags, &ds, &split, cfg.run.seed)?;
    let name = name.unwrap_or(method);
    let checkpoint = checkpoint_path(cfg, name);
    let log = cfg.run.out.join(format!("{name}_train.csv"));
    save_checkpoint(&outcome.model.params, &checkpoint)?;
    write_file(&log, train_log_csv(&outcome.log))?;
    Ok(TrainOutput {
        checkpoint,
        log,
        final_train_acc: outcome.log.last().map(|e| e.train_acc),
    })
}

/// Retrieval metrics of a checkpoint, written to `eval_<stem>.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(PathBuf, EvalReport)> {
    let (ds, split) = load_data(cfg)?;
    let model = load_model(cfg, &split, checkpoint)?;
    let _lock = OutputLock::acquire(&cfg.run.out)?;
    let report = retrieval_eval(&model, &ds, &split.query, &split.gallery, cfg.distance()?, &cfg.eval_options())?;
    let name = file_stem(checkpoint);
    let path = cfg.run.out.join(format!("eval_{name}.csv"));
    write_file(&path, format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(&name)))?;
    Ok((path, report))
}

/// Transfer attack: adversarial queries crafted on `surrogate`, evaluated on
/// `target`. Written to `attack_<target stem>.csv`.
pub fn cmd_attack(cfg: &ExperimentConfig, target: &Path, surrogate: &Path) -> Result<(PathBuf, AttackReport)> {
    let kind = match cfg.attack.kind.as_str() {
        "gaussian" => AttackKind::Gaussian,
        _ => AttackKind::TransferPgd,
    };
    let (ds, split) = load_data(cfg)?;
    let target_model = load_model(cfg, &split, target)?;
    let surrogate_model = load_model(cfg, &split, surrogate)?;
    let _lock = OutputLock::acquire(&cfg.run.out)?;
    let queries = RetrievalSet {
        images: images_of(&ds, &split.query)?,
        labels: labels_of(&ds, &split.query),
    };
    let gallery = RetrievalSet {
        images: images_of(&ds, &split.gallery)?,
        labels: labels_of(&ds, &split.gallery),
    };
    let name = file_stem(target);
    let report = transfer_evaluate(
        &name,
        &target_model,
        &surrogate_model,
        &queries,
        &gallery,
        &cfg.attack_config(),
        kind,
        cfg.distance()?,
    )?;
    let path = cfg.run.out.join(format!("attack_{name}.csv"));
    write_file(&path, report.to_csv())?;
    Ok((path, report))
}

/// Train and evaluate every method listed in `[run] methods`, one CSV row
/// each, written to `compare.csv`.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<(String, EvalReport)>)> {
    let methods: Vec<(String, MethodFlags)> = cfg
        .run
        .methods
        .iter()
        .map(|m| Ok((m.clone(), MethodFlags::parse(m)?)))
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::config("[run] methods is empty"));
    }
    let (ds, split) = load_data(cfg)?;
    let _lock = OutputLock::acquire(&cfg.run.out)?;
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    let mut rows = Vec::new();
    for (name, flags) in methods {
        let outcome = train(cfg, flags, &ds, &split, cfg.run.seed)?;
        let report =
            retrieval_eval(&outcome.model, &ds, &split.query, &split.gallery, cfg.distance()?, &cfg.eval_options())?;
        csv.push_str(&report.csv_row(&name));
        csv.push('\n');
        rows.push((name, report));
    }
    let path = cfg.run.out.join("compare.csv");
    write_file(&path, csv)?;
    Ok((path, rows))
}

/// A parameter sweep: every value is trained and evaluated once per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<toml::Value>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            param: cfg.sweep.param.clone(),
            values: cfg.sweep.values.clone(),
            seeds: cfg.sweep.seeds.clone(),
        }
    }

    /// One validated config per value.
    pub fn resolve(&self, cfg: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        if self.values.is_empty() {
            return Err(Error::config("sweep value list is empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("sweep seed list is empty"));
        }
        self.values.iter().map(|v| cfg.set_value(&self.param, v.clone())).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub value: String,
    pub seed: u64,
    pub rank1: f64,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plot: Option<PathBuf>,
    pub cells: Vec<SweepCell>,
    /// Value with the highest median mAP (first wins on ties).
    pub best_value: String,
}

pub const SWEEP_HEADER: &str = "param,value,seed,rank1,map";
pub const SWEEP_SUMMARY_HEADER: &str = "param,value,median_rank1,median_map,best";

fn format_value(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(f) => format!("{f:.4}"),
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Run a sweep and write `sweep_<param>.csv` plus a per-value summary.
pub fn cmd_sweep(cfg: &ExperimentConfig, spec: &SweepSpec, plot: bool) -> Result<SweepOutput> {
    let configs = spec.resolve(cfg)?;
    let (ds, split) = load_data(cfg)?;
    let _lock = OutputLock::acquire(&cfg.run.out)?;
    let distance = cfg.distance()?;
    let mut cells = Vec::new();
    let mut summary_rows = Vec::new();
    for (value, vcfg) in spec.values.iter().zip(&configs) {
        let label = format_value(value);
        let mut r1s = Vec::new();
        let mut maps = Vec::new();
        for &seed in &spec.seeds {
            let outcome = train(vcfg, MethodFlags::default(), &ds, &split, seed)?;
            let report =
                retrieval_eval(&outcome.model, &ds, &split.query, &split.gallery, distance, &vcfg.eval_options())?;
            r1s.push(report.rank1);
            maps.push(report.map);
            cells.push(SweepCell {
                value: label.clone(),
                seed,
                rank1: report.rank1,
                map: report.map,
            });
        }
        summary_rows.push((label, median(&mut r1s), median(&mut maps)));
    }
    let best = summary_rows
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.2 > summary_rows[b].2 { i } else { b });

    let stem = format!("sweep_{}", spec.param.replace('.', "_"));
    let mut csv = format!("{SWEEP_HEADER}\n");
    for c in &cells {
        csv.push_str(&format!("{},{},{},{:.4},{:.4}\n", spec.param, c.value, c.seed, c.rank1, c.map));
    }
    let mut summary = format!("{SWEEP_SUMMARY_HEADER}\n");
    for (i, (label, r1, map)) in summary_rows.iter().enumerate() {
        summary.push_str(&format!("{},{label},{r1:.4},{map:.4},{}\n", spec.param, u8::from(i == best)));
    }
    let csv_path = cfg.run.out.join(format!("{stem}.csv"));
    let summary_path = cfg.run.out.join(format!("{stem}_summary.csv"));
    write_file(&csv_path, csv)?;
    write_file(&summary_path, summary)?;
    let plot_path = if plot {
        let path = cfg.run.out.join(format!("{stem}.pgm"));
        let ys: Vec<f64> = summary_rows.iter().map(|r| r.2).collect();
        let (w, h, pixels) = line_plot(&ys);
        write_pgm(&path, w, h, &pixels)?;
        Some(path)
    } else {
        None
    };
    Ok(SweepOutput {
        csv: csv_path,
        summary: summary_path,
        plot: plot_path,
        cells,
        best_value: summary_rows[best].0.clone(),
    })
}

/// Grayscale line plot of `ys` (equally spaced, y axis fixed to [0, 1]).
pub fn line_plot(ys: &[f64]) -> (u32, u32, Vec<u8>) {
    const W: usize = 240;
    const H: usize = 160;
    const M: usize = 12;
    let mut px = vec![255u8; W * H];
    let mut set = |x: usize, y: usize, v: u8| {
        if x < W && y < H {
            px[y * W + x] = v;
        }
    };
    for x in M..W - M {
        set(x, H - M, 0);
    }
    for y in M..=H - M {
        set(M, y, 0);
    }
    let to_xy = |i: usize, v: f64| {
        let span = (ys.len().max(2) - 1) as f64;
        let x = M as f64 + (W - 2 * M) as f64 * i as f64 / span;
        let y = (H - M) as f64 - (H - 2 * M) as f64 * v.clamp(0.0, 1.0);
        (x, y)
    };
    for i in 0..ys.len() {
        let (x0, y0) = to_xy(i, ys[i]);
        let (x1, y1) = if i + 1 < ys.len() { to_xy(i + 1, ys[i + 1]) } else { (x0, y0) };
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            set((x0 + t * (x1 - x0)).round() as usize, (y0 + t * (y1 - y0)).round() as usize, 64);
        }
        for dy in 0..5 {
            for dx in 0..5 {
                set((x0.round() as usize + dx).saturating_sub(2), (y0.round() as usize + dy).saturating_sub(2), 0);
            }
        }
    }
    (W as u32, H as u32, px)
}

/// Binary (P5) PGM.
pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width, height, ExtendedColorType::L8)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Min-max normalize one channel plane to bytes (constant planes map to 0).
pub fn plane_to_bytes(plane: &[f32]) -> Vec<u8> {
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi <= lo {
        return vec![0; plane.len()];
    }
    let span = (hi - lo) as f64;
    plane.iter().map(|&v| (((v - lo) as f64 / span) * 255.0).round() as u8).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VizOutput {
    pub dir: PathBuf,
    pub before: Vec<PathBuf>,
    pub after: Vec<PathBuf>,
    pub log: PathBuf,
}

/// Per-channel images of one sample's stem features before and after
/// masking, plus the decision log.
pub fn cmd_viz_masks(cfg: &ExperimentConfig, checkpoint: &Path, index: usize) -> Result<VizOutput> {
    let (ds, split) = load_data(cfg)?;
    if index >= ds.samples.len() {
        return Err(Error::config(format!("sample index {index} outside [0, {})", ds.samples.len())));
    }
    let model = load_model(cfg, &split, checkpoint)?;
    let _lock = OutputLock::acquire(&cfg.run.out)?;
    let features: FeatureBlock<f32> = model.net.stem_features(&model.params, &images_of(&ds, &[index])?)?;
    let rng = RngStream::new(cfg.run.seed).child("viz", index as u64);
    let (masked, decisions) = lfm_apply(&features, &cfg.lfm_config(), &rng, true)?;
    let dir = cfg.run.out.join("viz").join(format!("sample{index}"));
    let (_, c, h, w) = features.dims();
    let mut before = Vec::with_capacity(c);
    let mut after = Vec::with_capacity(c);
    for ch in 0..c {
        let b = dir.join(format!("c{ch:02}_before.pgm"));
        let a = dir.join(format!("c{ch:02}_after.pgm"));
        write_pgm(&b, w as u32, h as u32, &plane_to_bytes(features.plane(0, ch)))?;
        write_pgm(&a, w as u32, h as u32, &plane_to_bytes(masked.plane(0, ch)))?;
        before.push(b);
        after.push(a);
    }
    let log = dir.join("masks.log");
    write_file(&log, decision_log(&decisions))?;
    Ok(VizOutput { dir, before, after, log })
}
