//! Paired baseline vs masking study over several seeds, with clean and
//! transfer-attacked retrieval metrics for every model.

use std::time::Instant;

use crate::attack::{transfer_evaluate, AttackKind, RetrievalSet};
use crate::data::{Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::nn::Model;

use super::config::{ExperimentConfig, MethodFlags};
use super::train::{classification_accuracy, images_of, labels_of, train};

#[derive(Clone, Debug, PartialEq)]
pub struct StudyArm {
    pub method: String,
    pub seed: u64,
    /// Eval-mode accuracy on the training split.
    pub train_acc: f64,
    pub clean: EvalReport,
    pub attacked: EvalReport,
    /// Wall-clock training time (not part of any written output).
    pub train_seconds: f64,
}

impl StudyArm {
    /// Train accuracy minus test rank-1.
    pub fn generalization_gap(&self) -> f64 {
        self.train_acc - self.clean.rank1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedStudy {
    pub baseline: Vec<StudyArm>,
    pub lfm: Vec<StudyArm>,
}

pub const STUDY_HEADER: &str = "method,seed,surrogate_seed,train_acc,rank1,map,attacked_rank1,attacked_map";

impl PairedStudy {
    pub fn to_csv(&self, seeds: &[u64]) -> String {
        let mut out = format!("{STUDY_HEADER}\n");
        for arm in self.baseline.iter().chain(&self.lfm) {
            let i = seeds.iter().position(|s| *s == arm.seed).unwrap_or(0);
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                arm.method,
                arm.seed,
                seeds[(i + 1) % seeds.len()],
                arm.train_acc,
                arm.clean.rank1,
                arm.clean.map,
                arm.attacked.rank1,
                arm.attacked.map
            ));
        }
        out
    }
}

/// Median of a list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of an empty list");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Train a baseline and a masking model for every seed. The pair for seed
/// `i` is attacked through the baseline of the next seed (cyclically), an
/// independently trained model without masking.
pub fn paired_study(cfg: &ExperimentConfig, ds: &Dataset, split: &SplitSpec, seeds: &[u64]) -> Result<PairedStudy> {
    if seeds.len() < 2 {
        return Err(Error::config("a paired study needs at least two seeds"));
    }
    let mut base_cfg = cfg.clone();
    base_cfg.lfm.enabled = false;
    let lfm_flags = MethodFlags {
        lfm: true,
        ..MethodFlags::default()
    };
    let timed = |c: &ExperimentConfig, flags: MethodFlags, seed: u64| -> Result<(Model<f32>, f64)> {
        let t = Instant::now();
        let model = train(c, flags, ds, split, seed)?.model;
        Ok((model, t.elapsed().as_secs_f64()))
    };
    let base_models: Vec<(Model<f32>, f64)> = seeds
        .iter()
        .map(|&s| timed(&base_cfg, MethodFlags::default(), s))
        .collect::<Result<_>>()?;
    let lfm_models: Vec<(Model<f32>, f64)> =
        seeds.iter().map(|&s| timed(cfg, lfm_flags, s)).collect::<Result<_>>()?;

    let queries = RetrievalSet {
        images: images_of(ds, &split.query)?,
        labels: labels_of(ds, &split.query),
    };
    let gallery = RetrievalSet {
        images: images_of(ds, &split.gallery)?,
        labels: labels_of(ds, &split.gallery),
    };
    let attack = cfg.attack_config();
    let distance = cfg.distance()?;
    let arm = |method: &str, i: usize, (model, secs): &(Model<f32>, f64)| -> Result<StudyArm> {
        let surrogate = &base_models[(i + 1) % seeds.len()].0;
        let report =
            transfer_evaluate(method, model, surrogate, &queries, &gallery, &attack, AttackKind::TransferPgd, distance)?;
        Ok(StudyArm {
            method: method.to_string(),
            seed: seeds[i],
            train_acc: classification_accuracy(model, ds, &split.train)?,
            clean: report.clean,
            attacked: report.attacked,
            train_seconds: *secs,
        })
    };
    let baseline = (0..seeds.len()).map(|i| arm("baseline", i, &base_models[i])).collect::<Result<_>>()?;
    let lfm = (0..seeds.len()).map(|i| arm("lfm", i, &lfm_models[i])).collect::<Result<_>>()?;
    Ok(PairedStudy { baseline, lfm })
}
