//! Training and evaluation loops shared by the commands.

use crate::data::{make_batches, normalize_pixels, AugmentFlags, Dataset, SplitSpec, IMAGE_C, IMAGE_H, IMAGE_W};
use crate::error::Result;
use crate::masking::FeatureBlock;
use crate::metrics::{evaluate, pairwise_distances, random_ranking_ap, DistanceKind, EvalOptions, EvalReport, Labels};
use crate::nn::{argmax_rows, sgd_step, softmax_cross_entropy, MiniResNet, Mode, Model, OptState};
use crate::rng::RngStream;

use super::config::{ExperimentConfig, MethodFlags};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub seed: u64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,train_acc,seed";

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{TRAIN_LOG_HEADER}\n");
    for e in log {
        out.push_str(&format!("{},{:.4},{:.4},{}\n", e.epoch, e.train_loss, e.train_acc, e.seed));
    }
    out
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
}

/// Build the network for `method` with initial weights drawn from `seed`.
pub fn init_model(cfg: &ExperimentConfig, method: MethodFlags, num_classes: usize, seed: u64) -> Result<Model<f32>> {
    let net = MiniResNet::new(cfg.model_config(method, num_classes)?)?;
    let params = net.init_params(&RngStream::new(seed).child("init", 0));
    Model::new(net, params)
}

/// SGD with momentum over the training split. Every random draw comes from
/// substreams of `seed`, so equal inputs give bit-identical weights.
pub fn train(
    cfg: &ExperimentConfig,
    method: MethodFlags,
    dataset: &Dataset,
    split: &SplitSpec,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut model = init_model(cfg, method, split.num_classes(), seed)?;
    let augment = cfg.augment(method);
    let root = RngStream::new(seed);
    let data_rng = root.child("data", 0);
    let k = split.num_classes();
    let mut opt = OptState::new(cfg.lr_schedule(), cfg.train.momentum, cfg.train.weight_decay);
    let mut log = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        opt.set_epoch(epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let batches = make_batches(dataset, &split.train, cfg.train.batch_size, &data_rng, epoch as u64, &augment, true)?;
        for (step, batch) in batches.enumerate() {
            let batch = batch?;
            let rng = root.derive("forward", epoch as u64, step as u64);
            let pass = model.net.forward(&model.params, &batch.images, Mode::Train, &rng)?;
            let (loss, dlogits) =
                softmax_cross_entropy(&pass.logits.values, k, &batch.labels, model.net.config().label_smoothing)?;
            let grads = model.net.backward(&model.params, &pass, Some(&dlogits), None, false)?;
            grads.accumulate_into(&mut model.params)?;
            pass.commit_running_stats(&mut model.params)?;
            sgd_step(&mut model.params, &mut opt)?;
            let n = batch.labels.len();
            loss_sum += loss * n as f64;
            seen += n;
            correct += argmax_rows(&pass.logits.values, k)
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            seed,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Normalized images for the given sample indices.
pub fn images_of(dataset: &Dataset, indices: &[usize]) -> Result<FeatureBlock<f32>> {
    let mut values = Vec::with_capacity(indices.len() * IMAGE_C * IMAGE_H * IMAGE_W);
    for &i in indices {
        values.extend(normalize_pixels(&dataset.samples[i].pixels));
    }
    FeatureBlock::new((indices.len(), IMAGE_C, IMAGE_H, IMAGE_W), values)
}

pub fn labels_of(dataset: &Dataset, indices: &[usize]) -> Labels {
    Labels {
        ids: indices.iter().map(|&i| dataset.samples[i].identity).collect(),
        cams: indices.iter().map(|&i| dataset.samples[i].camera).collect(),
    }
}

/// Eval-mode classification accuracy on `(index, label)` items.
pub fn classification_accuracy(model: &Model<f32>, dataset: &Dataset, items: &[(usize, usize)]) -> Result<f64> {
    let k = model.net.config().num_classes;
    let batches = make_batches(dataset, items, 64, &RngStream::new(0), 0, &AugmentFlags::default(), false)?;
    let mut correct = 0usize;
    for batch in batches {
        let batch = batch?;
        let pass = model.net.forward(&model.params, &batch.images, Mode::Eval, &RngStream::new(0))?;
        correct += argmax_rows(&pass.logits.values, k)
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Retrieval metrics of `query` against `gallery` sample indices.
pub fn retrieval_eval(
    model: &Model<f32>,
    dataset: &Dataset,
    query: &[usize],
    gallery: &[usize],
    distance: DistanceKind,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let q = model.embed(&images_of(dataset, query)?, 64)?;
    let g = model.embed(&images_of(dataset, gallery)?, 64)?;
    let dist = pairwise_distances(&q, &g, model.net.config().embedding_dim(), distance)?;
    evaluate(&dist, &labels_of(dataset, query), &labels_of(dataset, gallery), opts, distance)
}

/// Expected mAP of a uniformly random ranking under the split's protocol.
pub fn random_retrieval_map(dataset: &Dataset, split: &SplitSpec, exclude_same_camera: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &q in &split.query {
        let qs = &dataset.samples[q];
        let valid: Vec<usize> = split
            .gallery
            .iter()
            .copied()
            .filter(|&g| {
                let gs = &dataset.samples[g];
                !(exclude_same_camera && gs.identity == qs.identity && gs.camera == qs.camera)
            })
            .collect();
        let r = valid.iter().filter(|&&g| dataset.samples[g].identity == qs.identity).count();
        if r > 0 {
            sum += random_ranking_ap(valid.len(), r);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
