//! Sectioned experiment configuration (`[section]` + `key = value`, TOML
//! syntax). Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::AugmentFlags;
use crate::error::{Error, Result};
use crate::masking::LfmConfig;
use crate::metrics::{DistanceKind, EvalOptions};
use crate::nn::{LrSchedule, MiniResNetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub n_identities: usize,
    pub train_identities: usize,
    pub views: usize,
    pub cams: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            seed: 1,
            n_identities: 75,
            train_identities: 50,
            views: 8,
            cams: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub stem_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub dropout: f64,
    pub spatial_dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            dropout: 0.0,
            spatial_dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfmSection {
    pub enabled: bool,
    pub probability: f64,
    /// Defaults to half the stem channels.
    pub num_masked_channels: Option<usize>,
    pub area_low: f64,
    pub area_high: f64,
    pub aspect_low: f64,
    /// Defaults to `1 / aspect_low`.
    pub aspect_high: Option<f64>,
    pub max_attempts: usize,
}

impl Default for LfmSection {
    fn default() -> Self {
        Self {
            enabled: false,
            probability: 0.15,
            num_masked_channels: None,
            area_low: 0.03,
            area_high: 0.4,
            aspect_low: 0.3,
            aspect_high: None,
            max_attempts: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    /// Step decay period in epochs; 0 keeps the rate constant.
    pub lr_step_epochs: usize,
    pub lr_gamma: f64,
    pub flip: bool,
    pub pad_crop: usize,
    /// Cutout square side in pixels; 0 disables cutout.
    pub cutout_side: usize,
    pub cutout_fill: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            label_smoothing: 0.1,
            lr_step_epochs: 20,
            lr_gamma: 0.1,
            flip: true,
            pad_crop: 0,
            cutout_side: 0,
            cutout_fill: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub random_start: bool,
    pub noise_sigma: f64,
    pub seed: u64,
    /// `pgd` or `gaussian`.
    pub kind: String,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            epsilon: a.epsilon,
            step_size: a.step_size,
            steps: a.steps,
            random_start: a.random_start,
            noise_sigma: a.noise_sigma,
            seed: a.seed,
            kind: "pgd".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub distance: String,
    pub ks: Vec<usize>,
    pub exclude_same_camera: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            distance: "euclidean".into(),
            ks: vec![1, 5, 10],
            exclude_same_camera: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    /// Method combinations for `compare`, e.g. `"lfm+cutout+dropout"`.
    pub methods: Vec<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            methods: vec!["baseline".into(), "dropout".into(), "lfm".into(), "cutout".into(), "lfm+cutout+dropout".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// `section.key` of the swept parameter.
    pub param: String,
    pub values: Vec<toml::Value>,
    pub seeds: Vec<u64>,
    /// Also render the median-mAP curve as a PGM image.
    pub plot: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            param: "lfm.num_masked_channels".into(),
            values: Vec::new(),
            seeds: vec![0],
            plot: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub lfm: LfmSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub eval: EvalSection,
    pub run: RunSection,
    pub sweep: SweepSection,
}

/// Method flags parsed from `"lfm+cutout+dropout"`-style names.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MethodFlags {
    pub lfm: bool,
    pub dropout: bool,
    pub spatial_dropout: bool,
    pub cutout: bool,
}

impl MethodFlags {
    pub fn parse(name: &str) -> Result<Self> {
        let mut flags = Self::default();
        for part in name.split('+').map(str::trim) {
            match part {
                "baseline" => {}
                "lfm" => flags.lfm = true,
                "dropout" => flags.dropout = true,
                "spatial-dropout" => flags.spatial_dropout = true,
                "cutout" => flags.cutout = true,
                other => return Err(Error::config(format!("unknown method component {other:?} in {name:?}"))),
            }
        }
        Ok(flags)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Set `section.key` to a TOML literal, re-validating the whole config.
    pub fn set_path(&self, path: &str, literal: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {literal}"))
            .map(|mut t| t.remove("v").expect("key present"))
            .or_else(|_| Ok::<_, Error>(toml::Value::String(literal.to_string())))?;
        self.set_value(path, value)
    }

    pub fn set_value(&self, path: &str, value: toml::Value) -> Result<Self> {
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::config(format!("parameter path {path:?} must be section.key")))?;
        let mut root = toml::Value::try_from(self).map_err(|e| Error::config(e.to_string()))?;
        let table = root
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::config(format!("unknown config section {section:?}")))?;
        let value = match (default_value_kind(section, key), value) {
            (Some(ValueKind::Float), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (None, _) => return Err(Error::config(format!("unknown config key {path:?}"))),
            (_, v) => v,
        };
        table.insert(key.to_string(), value);
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::config(format!("{path}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_identities < 2 || d.views < 2 || d.cams < 2 {
            return Err(Error::config("[data] needs n_identities, views and cams >= 2"));
        }
        if d.train_identities == 0 || d.train_identities >= d.n_identities {
            return Err(Error::config("[data] train_identities must be in [1, n_identities)"));
        }
        if self.train.batch_size == 0 {
            return Err(Error::config("[train] batch_size must be positive"));
        }
        if !(self.train.lr >= 0.0 && self.train.momentum >= 0.0 && self.train.weight_decay >= 0.0) {
            return Err(Error::config("[train] lr, momentum and weight_decay must be non-negative"));
        }
        if self.train.cutout_side > 0 && self.train.cutout_side > 2 * 32 {
            return Err(Error::config("[train] cutout_side exceeds twice the image width"));
        }
        self.model_config(MethodFlags::default(), 2)?;
        self.attack_config().validate()?;
        self.distance()?;
        if !matches!(self.attack.kind.as_str(), "pgd" | "gaussian") {
            return Err(Error::config(format!("[attack] kind {:?} is not pgd or gaussian", self.attack.kind)));
        }
        for m in &self.run.methods {
            MethodFlags::parse(m)?;
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::config("[eval] ks must be non-empty and positive"));
        }
        Ok(())
    }

    pub fn lfm_config(&self) -> LfmConfig {
        let l = &self.lfm;
        LfmConfig {
            probability: l.probability,
            num_masked_channels: l.num_masked_channels.unwrap_or(self.model.stem_channels / 2),
            area_low: l.area_low,
            area_high: l.area_high,
            aspect_low: l.aspect_low,
            aspect_high: l.aspect_high.unwrap_or(1.0 / l.aspect_low),
            max_attempts: l.max_attempts,
        }
    }

    /// Network config; method flags switch regularizers on in addition to
    /// whatever the config file enables.
    pub fn model_config(&self, method: MethodFlags, num_classes: usize) -> Result<MiniResNetConfig> {
        let m = &self.model;
        let dropout = if method.dropout && m.dropout == 0.0 { 0.5 } else { m.dropout };
        let spatial = if method.spatial_dropout && m.spatial_dropout == 0.0 { 0.1 } else { m.spatial_dropout };
        let cfg = MiniResNetConfig {
            stem_channels: m.stem_channels,
            stage_widths: m.stage_widths.clone(),
            blocks_per_stage: m.blocks_per_stage,
            num_classes,
            lfm_enabled: self.lfm.enabled || method.lfm,
            lfm: self.lfm_config(),
            label_smoothing: self.train.label_smoothing,
            dropout,
            spatial_dropout: spatial,
            ..MiniResNetConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn augment(&self, method: MethodFlags) -> AugmentFlags {
        let side = if method.cutout && self.train.cutout_side == 0 { 16 } else { self.train.cutout_side };
        AugmentFlags {
            flip: self.train.flip,
            pad_crop: self.train.pad_crop,
            cutout: (side > 0).then_some((side, self.train.cutout_fill)),
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        if self.train.lr_step_epochs == 0 {
            LrSchedule::Constant(self.train.lr)
        } else {
            LrSchedule::StepDecay {
                base: self.train.lr,
                step_epochs: self.train.lr_step_epochs,
                gamma: self.train.lr_gamma,
            }
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            epsilon: a.epsilon,
            step_size: a.step_size,
            steps: a.steps,
            random_start: a.random_start,
            noise_sigma: a.noise_sigma,
            seed: a.seed,
        }
    }

    pub fn distance(&self) -> Result<DistanceKind> {
        self.eval.distance.parse()
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.eval.ks.clone(),
            exclude_same_camera: self.eval.exclude_same_camera,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ValueKind {
    Float,
    Other,
}

/// Kind of `section.key` in the default config (`None` if the key is unknown).
fn default_value_kind(section: &str, key: &str) -> Option<ValueKind> {
    let known_float = matches!(
        (section, key),
        ("lfm", "probability" | "area_low" | "area_high" | "aspect_low" | "aspect_high")
            | ("model", "dropout" | "spatial_dropout")
            | ("train", "lr" | "momentum" | "weight_decay" | "label_smoothing" | "lr_gamma" | "cutout_fill")
            | ("attack", "epsilon" | "step_size" | "noise_sigma")
    );
    if known_float {
        return Some(ValueKind::Float);
    }
    let known = matches!(
        (section, key),
        ("data", "seed" | "n_identities" | "train_identities" | "views" | "cams")
            | ("model", "stem_channels" | "stage_widths" | "blocks_per_stage")
            | ("lfm", "enabled" | "num_masked_channels" | "max_attempts")
            | ("train", "epochs" | "batch_size" | "lr_step_epochs" | "flip" | "pad_crop" | "cutout_side")
            | ("attack", "steps" | "random_start" | "seed" | "kind")
            | ("eval", "distance" | "ks" | "exclude_same_camera")
            | ("run", "seed" | "out" | "methods")
            | ("sweep", "param" | "values" | "seeds" | "plot")
    );
    known.then_some(ValueKind::Other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let lfm = cfg.lfm_config();
        assert_eq!(lfm.num_masked_channels, 8);
        assert!((lfm.aspect_high - 1.0 / 0.3).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_and_sections_fail() {
        assert!(ExperimentConfig::from_toml_str("[lfm]\nprobabilty = 0.1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[nope]\nx = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[lfm]\nprobability = 2.0\n").is_err());
    }

    #[test]
    fn comments_and_sections_parse() {
        let text = "# desk run\n[lfm]\nenabled = true # on\nprobability = 0.05\n[run]\nout = \"x/y\"\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(cfg.lfm.enabled);
        assert_eq!(cfg.lfm.probability, 0.05);
        assert_eq!(cfg.run.out, PathBuf::from("x/y"));
    }

    #[test]
    fn set_path_resolves_and_coerces() {
        let cfg = ExperimentConfig::default();
        let c = cfg.set_path("lfm.num_masked_channels", "4").unwrap();
        assert_eq!(c.lfm_config().num_masked_channels, 4);
        let c = cfg.set_path("lfm.probability", "1").unwrap();
        assert_eq!(c.lfm.probability, 1.0);
        assert!(cfg.set_path("lfm.nope", "1").is_err());
        assert!(cfg.set_path("lfm", "1").is_err());
        assert!(cfg.set_path("lfm.num_masked_channels", "17").is_err());
        let c = cfg.set_path("run.out", "plain/path").unwrap();
        assert_eq!(c.run.out, PathBuf::from("plain/path"));
    }

    #[test]
    fn method_flags() {
        let f = MethodFlags::parse("lfm+cutout+dropout").unwrap();
        assert!(f.lfm && f.cutout && f.dropout && !f.spatial_dropout);
        assert_eq!(MethodFlags::parse("baseline").unwrap(), MethodFlags::default());
        assert!(MethodFlags::parse("lfm+mixup").is_err());
    }
}
