//! Central-difference verification of the analytic backward pass.

use crate::error::Result;
use crate::masking::{masked_elements, FeatureBlock, MaskDecision};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::model::{MiniResNet, Mode};
use crate::nn::tensor::ParamSet;
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst parameter.
    pub worst: String,
    pub checked: usize,
    /// Largest |gradient| at masked positions of the masking input.
    pub masked_input_grad_max: f64,
    pub masked_positions: usize,
    /// Entries whose first step crossed a ReLU/max-pool kink and were
    /// re-measured with a smaller step.
    pub kink_retries: usize,
    /// Entries for which every step crossed a kink (not compared).
    pub skipped: usize,
}

/// Steps tried after the requested one when a perturbation crosses a kink.
const FALLBACK_STEPS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];

/// Relative error with an absolute floor so that parameters with vanishing
/// gradients compare on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

fn loss_at(
    net: &MiniResNet,
    params: &ParamSet<f64>,
    images: &FeatureBlock<f64>,
    labels: &[usize],
    rng: &RngStream,
    masks: Option<&[MaskDecision]>,
) -> Result<(f64, u64)> {
    let pass = net.forward_with_masks(params, images, Mode::Train, rng, masks)?;
    let (loss, _) = softmax_cross_entropy(&pass.logits.values, net.config().num_classes, labels, net.config().label_smoothing)?;
    Ok((loss, pass.kink_signature()))
}

/// Compare analytic gradients of the training loss with central differences
/// on `n_params` parameter entries (at least one per trainable tensor).
///
/// Masking is frozen: recorded `masks` are replayed when given, otherwise the
/// decisions drawn by the first pass are recorded and replayed for every
/// perturbed evaluation.
///
/// The numeric derivative is the fourth-order central stencil over
/// `w +- step` and `w +- step/2`.
///
/// Central differences are only valid when all perturbed points sit on
/// the same smooth piece as `w`. When a perturbed pass flips a ReLU or a
/// max-pool winner the entry is re-measured with steps 1e-4 down to 1e-7.
pub fn grad_check(
    net: &MiniResNet,
    params: &ParamSet<f64>,
    images: &FeatureBlock<f64>,
    labels: &[usize],
    rng: &RngStream,
    masks: Option<&[MaskDecision]>,
    n_params: usize,
    step: f64,
) -> Result<GradCheckReport> {
    let first = net.forward_with_masks(params, images, Mode::Train, rng, masks)?;
    let frozen: Option<Vec<MaskDecision>> = if net.config().lfm_enabled {
        Some(masks.map(<[MaskDecision]>::to_vec).unwrap_or_else(|| first.decisions.clone()))
    } else {
        None
    };
    let frozen = frozen.as_deref();
    let (_, dlogits) =
        softmax_cross_entropy(&first.logits.values, net.config().num_classes, labels, net.config().label_smoothing)?;
    let grads = net.backward(params, &first, Some(&dlogits), None, false)?;

    let mut masked_max = 0.0f64;
    let mut masked_positions = 0;
    if let Some(ds) = frozen {
        let stem = net.stem_features(params, images)?;
        let mask = masked_elements(stem.dims(), ds);
        for (g, m) in grads.masking_input.iter().zip(&mask) {
            if *m {
                masked_positions += 1;
                masked_max = masked_max.max(g.abs());
            }
        }
    }

    let trainable = params.trainable_names();
    let mut picks: Vec<(String, usize)> = Vec::new();
    let mut pick_rng = rng.child("gradcheck-picks", 0);
    for name in &trainable {
        let len = params.get(name)?.len();
        picks.push((name.clone(), pick_rng.uniform_int(len)));
    }
    let sizes: Vec<usize> = trainable.iter().map(|n| params.get(n).map(|t| t.len())).collect::<Result<_>>()?;
    let total: usize = sizes.iter().sum();
    while picks.len() < n_params {
        let mut flat = pick_rng.uniform_int(total);
        for (name, len) in trainable.iter().zip(&sizes) {
            if flat < *len {
                picks.push((name.clone(), flat));
                break;
            }
            flat -= len;
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        masked_input_grad_max: masked_max,
        masked_positions,
        kink_retries: 0,
        skipped: 0,
    };
    let base_signature = first.kink_signature();
    let mut work = params.clone();
    for (name, idx) in picks {
        let analytic = grads
            .params
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g[idx])
            .unwrap_or(0.0);
        let original = work.get(&name)?.values[idx];
        let mut numeric = None;
        for (attempt, h) in std::iter::once(step).chain(FALLBACK_STEPS.into_iter().filter(|h| *h < step)).enumerate() {
            let mut f = [0.0; 4];
            let mut smooth = true;
            for (slot, delta) in f.iter_mut().zip([h, -h, h / 2.0, -h / 2.0]) {
                work.get_mut(&name)?.values[idx] = original + delta;
                let (loss, sig) = loss_at(net, &work, images, labels, rng, frozen)?;
                *slot = loss;
                smooth &= sig == base_signature;
            }
            work.get_mut(&name)?.values[idx] = original;
            if smooth {
                if attempt > 0 {
                    report.kink_retries += 1;
                }
                numeric = Some((8.0 * (f[2] - f[3]) - (f[0] - f[1])) / (6.0 * h));
                break;
            }
        }
        let Some(numeric) = numeric else {
            report.skipped += 1;
            continue;
        };
        let err = relative_error(analytic, numeric);
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = format!("{name}[{idx}] analytic={analytic:e} numeric={numeric:e}");
        }
        report.checked += 1;
    }
    Ok(report)
}
