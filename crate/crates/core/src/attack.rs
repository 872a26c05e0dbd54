//! Black-box robustness probe.
//!
//! Adversarial queries are crafted with projected gradient ascent on a
//! surrogate model's embedding divergence and then transferred to the
//! target, whose gradients are never requested. Outputs are labeled
//! `transfer-PGD (DMR substitute)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::masking::FeatureBlock;
use crate::metrics::{evaluate, pairwise_distances, DistanceKind, EvalOptions, EvalReport, Labels};
use crate::nn::Model;
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const TRANSFER_PGD_LABEL: &str = "transfer-PGD (DMR substitute)";

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    /// L-infinity budget in `[0, 1]` pixel units.
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub random_start: bool,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            steps: 10,
            random_start: true,
            noise_sigma: 8.0 / 255.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.step_size && self.step_size <= self.epsilon && self.epsilon <= 1.0) {
            return Err(Error::config(format!(
                "attack needs 0 <= step_size ({}) <= epsilon ({}) <= 1",
                self.step_size, self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(Error::config("attack steps must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    TransferPgd,
    Gaussian,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::TransferPgd => TRANSFER_PGD_LABEL,
            AttackKind::Gaussian => "gaussian-noise",
        })
    }
}

/// Squared L2 distance between each sample's embedding and its reference,
/// summed over the batch, with the gradient with respect to the pixels.
pub fn embedding_divergence_loss<T: Scalar>(
    model: &Model<T>,
    x: &FeatureBlock<T>,
    reference: &[T],
) -> Result<(f64, Vec<T>)> {
    let two = T::one() + T::one();
    let (emb, grad) = model.embedding_input_grad(x, |e| {
        e.iter().zip(reference).map(|(a, b)| two * (*a - *b)).collect()
    })?;
    if emb.len() != reference.len() {
        return Err(Error::structural(format!(
            "reference embedding has {} entries, expected {}",
            reference.len(),
            emb.len()
        )));
    }
    let loss = emb
        .iter()
        .zip(reference)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok((loss, grad))
}

/// Per-sample squared embedding distance between two batches.
pub fn per_sample_divergence<T: Scalar>(a: &[T], b: &[T], dim: usize) -> Vec<f64> {
    a.chunks(dim)
        .zip(b.chunks(dim))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2)).sum())
        .collect()
}

fn project<T: Scalar>(x: &mut [T], clean: &[T], eps: T) {
    for (v, c) in x.iter_mut().zip(clean) {
        let lo = (*c - eps).max(T::zero());
        let hi = (*c + eps).min(T::one());
        *v = v.max(lo).min(hi);
    }
}

/// L-infinity PGD maximizing embedding divergence from the clean embedding.
pub fn pgd_attack<T: Scalar>(surrogate: &Model<T>, x_clean: &FeatureBlock<T>, cfg: &AttackConfig) -> Result<FeatureBlock<T>> {
    cfg.validate()?;
    if x_clean.values().iter().any(|v| *v < T::zero() || *v > T::one()) {
        return Err(Error::Input("clean images must lie in [0, 1]".into()));
    }
    if cfg.epsilon == 0.0 {
        return Ok(x_clean.clone());
    }
    let reference = surrogate.embed(x_clean, 64)?;
    let eps = T::from_f64_lossy(cfg.epsilon);
    let alpha = T::from_f64_lossy(cfg.step_size);
    let clean = x_clean.values();
    let mut x = clean.to_vec();
    if cfg.random_start {
        let mut r = RngStream::new(cfg.seed).child("pgd-start", 0);
        for v in x.iter_mut() {
            *v = *v + T::from_f64_lossy(r.uniform_real(-cfg.epsilon, cfg.epsilon));
        }
        project(&mut x, clean, eps);
    }
    for _ in 0..cfg.steps {
        let block = FeatureBlock::new(x_clean.dims(), x)?;
        let (_, grad) = embedding_divergence_loss(surrogate, &block, &reference)?;
        x = block.into_values();
        for (v, g) in x.iter_mut().zip(&grad) {
            if *g > T::zero() {
                *v = *v + alpha;
            } else if *g < T::zero() {
                *v = *v - alpha;
            }
        }
        project(&mut x, clean, eps);
    }
    FeatureBlock::new(x_clean.dims(), x)
}

/// Additive Gaussian pixel noise, clipped to `[0, 1]`.
pub fn gaussian_attack<T: Scalar>(x_clean: &FeatureBlock<T>, sigma: f64, rng: &RngStream) -> Result<FeatureBlock<T>> {
    if !(sigma >= 0.0) {
        return Err(Error::config("noise sigma must be non-negative"));
    }
    if sigma == 0.0 {
        return Ok(x_clean.clone());
    }
    let mut r = rng.child("gaussian-attack", 0);
    let values = x_clean
        .values()
        .iter()
        .map(|v| T::from_f64_lossy((v.as_f64() + sigma * r.standard_normal()).clamp(0.0, 1.0)))
        .collect();
    FeatureBlock::new(x_clean.dims(), values)
}

/// Images plus identity/camera labels.
#[derive(Clone, Debug)]
pub struct RetrievalSet<T> {
    pub images: FeatureBlock<T>,
    pub labels: Labels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricDeltas {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub model: String,
    pub kind: AttackKind,
    pub config: AttackConfig,
    pub clean: EvalReport,
    pub attacked: EvalReport,
    pub deltas: MetricDeltas,
}

impl AttackReport {
    pub const CSV_HEADER: &'static str = "model,attack,epsilon,steps,phase,rank1,rank5,rank10,map";

    pub fn new(model: &str, kind: AttackKind, config: AttackConfig, clean: EvalReport, attacked: EvalReport) -> Self {
        let deltas = MetricDeltas {
            rank1: clean.rank1 - attacked.rank1,
            rank5: clean.rank5 - attacked.rank5,
            rank10: clean.rank10 - attacked.rank10,
            map: clean.map - attacked.map,
        };
        Self {
            model: model.to_string(),
            kind,
            config,
            clean,
            attacked,
            deltas,
        }
    }

    /// Header plus `clean`, `attacked` and `delta` rows.
    pub fn to_csv(&self) -> String {
        let row = |phase: &str, r1: f64, r5: f64, r10: f64, map: f64| {
            format!(
                "{},{},{:.4},{},{phase},{r1:.4},{r5:.4},{r10:.4},{map:.4}\n",
                self.model, self.kind, self.config.epsilon, self.config.steps
            )
        };
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let (c, a, d) = (&self.clean, &self.attacked, &self.deltas);
        out.push_str(&row("clean", c.rank1, c.rank5, c.rank10, c.map));
        out.push_str(&row("attacked", a.rank1, a.rank5, a.rank10, a.map));
        out.push_str(&row("delta", d.rank1, d.rank5, d.rank10, d.map));
        out
    }
}

fn retrieval_report<T: Scalar>(
    target: &Model<T>,
    queries: &FeatureBlock<T>,
    query_labels: &Labels,
    gallery_emb: &[T],
    gallery: &Labels,
    distance: DistanceKind,
) -> Result<EvalReport> {
    let q = target.embed(queries, 64)?;
    let dim = target.net.config().embedding_dim();
    let dist = pairwise_distances(&q, gallery_emb, dim, distance)?;
    evaluate(&dist, query_labels, gallery, &EvalOptions::default(), distance)
}

/// Clean vs attacked retrieval metrics of `target` with adversarial queries
/// crafted on `surrogate` only. The gallery stays clean.
pub fn transfer_evaluate<T: Scalar>(
    model_name: &str,
    target: &Model<T>,
    surrogate: &Model<T>,
    queries: &RetrievalSet<T>,
    gallery: &RetrievalSet<T>,
    cfg: &AttackConfig,
    kind: AttackKind,
    distance: DistanceKind,
) -> Result<AttackReport> {
    cfg.validate()?;
    if target.params.same_values(&surrogate.params) {
        return Err(Error::config("target and surrogate are the same model; a transfer attack needs two"));
    }
    let gallery_emb = target.embed(&gallery.images, 64)?;
    let clean = retrieval_report(target, &queries.images, &queries.labels, &gallery_emb, &gallery.labels, distance)?;
    let adversarial = match kind {
        AttackKind::TransferPgd => pgd_attack(surrogate, &queries.images, cfg)?,
        AttackKind::Gaussian => gaussian_attack(&queries.images, cfg.noise_sigma, &RngStream::new(cfg.seed))?,
    };
    let attacked = retrieval_report(target, &adversarial, &queries.labels, &gallery_emb, &gallery.labels, distance)?;
    Ok(AttackReport::new(model_name, kind, cfg.clone(), clean, attacked))
}
