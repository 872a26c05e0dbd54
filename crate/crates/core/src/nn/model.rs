//! Miniature residual network with local feature masking after the stem.
//!
//! stem conv3x3 -> BN -> ReLU -> [masking] -> maxpool 2x2 -> residual stages
//! -> global average pool (embedding) -> linear classifier.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::masking::{channel_dropout_mask, element_dropout_mask, lfm_apply, masked_elements, replay_decisions};
use crate::masking::{FeatureBlock, LfmConfig, MaskDecision};
use crate::nn::layers::{self, Act, BnBatchStats, BnCache, BnParams, ConvCache, ConvGeom, PoolCache};
use crate::nn::tensor::{ParamSet, Tensor};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct MiniResNetConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stem_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    pub lfm_enabled: bool,
    pub lfm: LfmConfig,
    pub label_smoothing: f64,
    /// Inverted dropout rate on the embedding before the classifier.
    pub dropout: f64,
    /// Channel dropout rate at the masking site.
    pub spatial_dropout: f64,
}

impl Default for MiniResNetConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_height: 64,
            input_width: 32,
            stem_channels: 16,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            num_classes: 50,
            lfm_enabled: false,
            lfm: LfmConfig::for_channels(16),
            label_smoothing: 0.0,
            dropout: 0.0,
            spatial_dropout: 0.0,
        }
    }
}

impl MiniResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_height < 2 || self.input_width < 2 {
            return Err(Error::config("input dims must be positive with at least 2x2 pixels"));
        }
        if self.stem_channels == 0 || self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::config("channel widths must be positive and at least one stage is needed"));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::config("blocks_per_stage must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        self.lfm.validate()?;
        if self.lfm.num_masked_channels > self.stem_channels {
            return Err(Error::config(format!(
                "lfm masks {} channels but the stem has {}",
                self.lfm.num_masked_channels, self.stem_channels
            )));
        }
        if !(0.0..=0.3).contains(&self.label_smoothing) {
            return Err(Error::config(format!("label smoothing {} outside [0, 0.3]", self.label_smoothing)));
        }
        for (name, q) in [("dropout", self.dropout), ("spatial_dropout", self.spatial_dropout)] {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::config(format!("{name} rate {q} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.stage_widths.last().expect("validated non-empty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct BlockSpec {
    prefix: String,
    conv1: ConvGeom,
    conv2: ConvGeom,
    shortcut: Option<ConvGeom>,
}

/// Network architecture; parameters live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct MiniResNet {
    cfg: MiniResNetConfig,
    stem: ConvGeom,
    blocks: Vec<BlockSpec>,
}

struct StemTrace<T> {
    conv: ConvCache<T>,
    bn: BnCache<T>,
    relu_out: Act<T>,
    lfm_mask: Option<Vec<bool>>,
    channel_keep: Option<Vec<bool>>,
    pool: PoolCache,
}

struct BlockTrace<T> {
    conv1: ConvCache<T>,
    bn1: BnCache<T>,
    relu1: Act<T>,
    conv2: ConvCache<T>,
    bn2: BnCache<T>,
    shortcut: Option<(ConvCache<T>, BnCache<T>)>,
    out: Act<T>,
}

/// Output of a forward pass plus everything the backward pass needs.
pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    pub embedding: Tensor<T>,
    pub decisions: Vec<MaskDecision>,
    mode: Mode,
    batch: usize,
    stem: StemTrace<T>,
    blocks: Vec<BlockTrace<T>>,
    last_shape: (usize, usize, usize, usize),
    classifier_input: Vec<T>,
    dropout_keep: Option<Vec<bool>>,
    bn_stats: Vec<(String, BnBatchStats)>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Hash of every ReLU on/off state and max-pool winner in the pass.
    ///
    /// Two passes with equal signatures lie on the same linear piece of the
    /// network's piecewise structure.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bit: u64| {
            h ^= bit;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        let mut relu = |a: &Act<T>| {
            for chunk in a.data.chunks(64) {
                let mut word = 0u64;
                for (i, v) in chunk.iter().enumerate() {
                    if *v > T::zero() {
                        word |= 1 << i;
                    }
                }
                feed(word);
            }
        };
        relu(&self.stem.relu_out);
        for b in &self.blocks {
            relu(&b.relu1);
            relu(&b.out);
        }
        for &i in self.stem.pool.argmax() {
            feed(i as u64);
        }
        h
    }

    /// Fold this pass's batch statistics into the running BN estimates.
    pub fn commit_running_stats(&self, params: &mut ParamSet<T>) -> Result<()> {
        let m = T::from_f64_lossy(layers::BN_MOMENTUM);
        let keep = T::one() - m;
        for (prefix, stats) in &self.bn_stats {
            let mean = &mut params.get_mut(&format!("{prefix}.running_mean"))?.values;
            for (r, s) in mean.iter_mut().zip(&stats.mean) {
                *r = keep * *r + m * T::from_f64_lossy(*s);
            }
            let var = &mut params.get_mut(&format!("{prefix}.running_var"))?.values;
            for (r, s) in var.iter_mut().zip(&stats.var_unbiased) {
                *r = keep * *r + m * T::from_f64_lossy(*s);
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`MiniResNet::backward`].
pub struct Gradients<T> {
    pub params: Vec<(String, Vec<T>)>,
    /// Gradient with respect to the input images, NCHW.
    pub input: Option<Vec<T>>,
    /// Gradient with respect to the masking input (stem ReLU output), NCHW.
    pub masking_input: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn accumulate_into(&self, params: &mut ParamSet<T>) -> Result<()> {
        for (name, g) in &self.params {
            params.get_mut(name)?.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn bn_names(prefix: &str) -> [String; 4] {
    [
        format!("{prefix}.gamma"),
        format!("{prefix}.beta"),
        format!("{prefix}.running_mean"),
        format!("{prefix}.running_var"),
    ]
}

impl MiniResNet {
    pub fn new(cfg: MiniResNetConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvGeom {
            cin: cfg.input_channels,
            cout: cfg.stem_channels,
            k: 3,
            stride: 1,
            pad: 1,
        };
        let mut blocks = Vec::new();
        let mut cin = cfg.stem_channels;
        for (s, &width) in cfg.stage_widths.iter().enumerate() {
            for b in 0..cfg.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let shortcut = (stride != 1 || cin != width).then_some(ConvGeom {
                    cin,
                    cout: width,
                    k: 1,
                    stride,
                    pad: 0,
                });
                blocks.push(BlockSpec {
                    prefix: format!("layer{}.{}", s + 1, b),
                    conv1: ConvGeom {
                        cin,
                        cout: width,
                        k: 3,
                        stride,
                        pad: 1,
                    },
                    conv2: ConvGeom {
                        cin: width,
                        cout: width,
                        k: 3,
                        stride: 1,
                        pad: 1,
                    },
                    shortcut,
                });
                cin = width;
            }
        }
        Ok(Self { cfg, stem, blocks })
    }

    pub fn config(&self) -> &MiniResNetConfig {
        &self.cfg
    }

    /// Expected `(name, shape, trainable)` for every parameter and buffer.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<_>, name: String, g: &ConvGeom| {
            out.push((name, vec![g.cout, g.cin, g.k, g.k], true));
        };
        let bn = |out: &mut Vec<_>, prefix: &str, c: usize| {
            let [g, b, m, v] = bn_names(prefix);
            out.push((g, vec![c], true));
            out.push((b, vec![c], true));
            out.push((m, vec![c], false));
            out.push((v, vec![c], false));
        };
        conv(&mut out, "stem.conv.weight".into(), &self.stem);
        bn(&mut out, "stem.bn", self.stem.cout);
        for blk in &self.blocks {
            conv(&mut out, format!("{}.conv1.weight", blk.prefix), &blk.conv1);
            bn(&mut out, &format!("{}.bn1", blk.prefix), blk.conv1.cout);
            conv(&mut out, format!("{}.conv2.weight", blk.prefix), &blk.conv2);
            bn(&mut out, &format!("{}.bn2", blk.prefix), blk.conv2.cout);
            if let Some(sc) = &blk.shortcut {
                conv(&mut out, format!("{}.shortcut.conv.weight", blk.prefix), sc);
                bn(&mut out, &format!("{}.shortcut.bn", blk.prefix), sc.cout);
            }
        }
        let d = self.cfg.embedding_dim();
        out.push(("fc.weight".into(), vec![self.cfg.num_classes, d], true));
        out.push(("fc.bias".into(), vec![self.cfg.num_classes], true));
        out
    }

    /// Fan-in scaled uniform weights, BN scale 1 / shift 0, zero biases.
    ///
    /// Each tensor draws from a substream keyed by its name.
    pub fn init_params<T: Scalar>(&self, rng: &RngStream) -> ParamSet<T> {
        let mut params = ParamSet::new();
        for (name, shape, trainable) in self.param_layout() {
            let n: usize = shape.iter().product();
            let values: Vec<T> = if name.ends_with(".gamma") || name.ends_with(".running_var") {
                vec![T::one(); n]
            } else if name.ends_with(".beta") || name.ends_with(".running_mean") || name.ends_with(".bias") {
                vec![T::zero(); n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = if name == "fc.weight" {
                    (1.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let mut r = rng.child(&format!("init:{name}"), 0);
                (0..n).map(|_| T::from_f64_lossy(r.uniform_real(-bound, bound))).collect()
            };
            params.insert(name, Tensor::new(shape, values, trainable).expect("layout is consistent"));
        }
        params
    }

    /// Check that `params` has exactly this architecture's names and shapes.
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let layout = self.param_layout();
        if layout.len() != params.len() {
            return Err(Error::structural(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape, _) in layout {
            let t = params.get(&name)?;
            if t.shape != shape {
                return Err(Error::structural(format!("{name} has shape {:?}, expected {shape:?}", t.shape)));
            }
        }
        Ok(())
    }

    fn bn<'a, T: Scalar>(params: &'a ParamSet<T>, prefix: &str) -> Result<BnParams<'a, T>> {
        let [g, b, m, v] = bn_names(prefix);
        Ok(BnParams {
            gamma: params.values(&g)?,
            beta: params.values(&b)?,
            running_mean: params.values(&m)?,
            running_var: params.values(&v)?,
        })
    }

    fn check_images<T: Scalar>(&self, images: &FeatureBlock<T>) -> Result<()> {
        let (_, c, h, w) = images.dims();
        let want = (self.cfg.input_channels, self.cfg.input_height, self.cfg.input_width);
        if (c, h, w) != want {
            return Err(Error::structural(format!(
                "images have shape {c}x{h}x{w}, network expects {}x{}x{}",
                want.0, want.1, want.2
            )));
        }
        Ok(())
    }

    /// Forward pass. Randomness (masking, dropout) is drawn from substreams
    /// of `rng` and only in training mode.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        images: &FeatureBlock<T>,
        mode: Mode,
        rng: &RngStream,
    ) -> Result<ForwardPass<T>> {
        self.forward_with_masks(params, images, mode, rng, None)
    }

    /// Stem activations (conv, BN, ReLU) in eval mode, before masking.
    pub fn stem_features<T: Scalar>(&self, params: &ParamSet<T>, images: &FeatureBlock<T>) -> Result<FeatureBlock<T>> {
        self.check_images(images)?;
        let x = Act::from_block(images);
        let (mut s, _) = layers::conv_forward(&x, params.values("stem.conv.weight")?, &self.stem)?;
        let (bn_out, _, _) = layers::bn_forward(&s, &Self::bn(params, "stem.bn")?, false)?;
        s = bn_out;
        layers::relu_inplace(&mut s);
        s.ensure_finite("stem")?;
        s.to_block()
    }

    /// Forward pass; when `masks` is given (training mode with masking
    /// enabled) the recorded decisions are replayed instead of drawn.
    pub fn forward_with_masks<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        images: &FeatureBlock<T>,
        mode: Mode,
        rng: &RngStream,
        masks: Option<&[MaskDecision]>,
    ) -> Result<ForwardPass<T>> {
        self.check_images(images)?;
        let training = mode == Mode::Train;
        let batch = images.batch();
        let mut bn_stats = Vec::new();
        let x = Act::from_block(images);

        let (conv_out, conv) = layers::conv_forward(&x, params.values("stem.conv.weight")?, &self.stem)?;
        conv_out.ensure_finite("stem.conv")?;
        let (mut s, bn, stats) = layers::bn_forward(&conv_out, &Self::bn(params, "stem.bn")?, training)?;
        if let Some(st) = stats {
            bn_stats.push(("stem.bn".to_string(), st));
        }
        layers::relu_inplace(&mut s);
        s.ensure_finite("stem.bn")?;
        let relu_out = s.clone();

        let mut decisions = Vec::new();
        let mut lfm_mask = None;
        if training && self.cfg.lfm_enabled {
            let block = s.to_block()?;
            let (masked, ds) = match masks {
                Some(recorded) => {
                    let mut out = block.clone();
                    replay_decisions(&mut out, recorded)?;
                    (out, recorded.to_vec())
                }
                None => lfm_apply(&block, &self.cfg.lfm, &rng.child("lfm", 0), true)?,
            };
            let mask = masked_elements(block.dims(), &ds);
            lfm_mask = Some(layers::nchw_to_cnhw(&mask, batch, s.c, s.h * s.w));
            s = Act::from_block(&masked);
            decisions = ds;
        }

        let mut channel_keep = None;
        if training && self.cfg.spatial_dropout > 0.0 {
            let keep = channel_dropout_mask(batch, s.c, self.cfg.spatial_dropout, &rng.child("spatial-dropout", 0))?;
            let scale = T::from_f64_lossy(1.0 / (1.0 - self.cfg.spatial_dropout));
            let hw = s.h * s.w;
            for c in 0..s.c {
                for b in 0..batch {
                    let k = keep[b * s.c + c];
                    for v in &mut s.data[(c * batch + b) * hw..(c * batch + b + 1) * hw] {
                        *v = if k { *v * scale } else { T::zero() };
                    }
                }
            }
            channel_keep = Some(keep);
        }

        let (mut h, pool) = layers::maxpool_forward(&s)?;
        let stem = StemTrace {
            conv,
            bn,
            relu_out,
            lfm_mask,
            channel_keep,
            pool,
        };

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for spec in &self.blocks {
            let p = &spec.prefix;
            let (c1, conv1) = layers::conv_forward(&h, params.values(&format!("{p}.conv1.weight"))?, &spec.conv1)?;
            let (mut r1, bn1, st1) = layers::bn_forward(&c1, &Self::bn(params, &format!("{p}.bn1"))?, training)?;
            layers::relu_inplace(&mut r1);
            r1.ensure_finite(&format!("{p}.bn1"))?;
            let (c2, conv2) = layers::conv_forward(&r1, params.values(&format!("{p}.conv2.weight"))?, &spec.conv2)?;
            let (mut out, bn2, st2) = layers::bn_forward(&c2, &Self::bn(params, &format!("{p}.bn2"))?, training)?;
            let mut shortcut = None;
            let mut st3 = None;
            if let Some(g) = &spec.shortcut {
                let (sc, sc_conv) = layers::conv_forward(&h, params.values(&format!("{p}.shortcut.conv.weight"))?, g)?;
                let (sc_out, sc_bn, st) =
                    layers::bn_forward(&sc, &Self::bn(params, &format!("{p}.shortcut.bn"))?, training)?;
                layers::add_inplace(&mut out, &sc_out);
                shortcut = Some((sc_conv, sc_bn));
                st3 = st;
            } else {
                layers::add_inplace(&mut out, &h);
            }
            layers::relu_inplace(&mut out);
            out.ensure_finite(p)?;
            for (suffix, st) in [("bn1", st1), ("bn2", st2), ("shortcut.bn", st3)] {
                if let Some(st) = st {
                    bn_stats.push((format!("{p}.{suffix}"), st));
                }
            }
            h = out.clone();
            blocks.push(BlockTrace {
                conv1,
                bn1,
                relu1: r1,
                conv2,
                bn2,
                shortcut,
                out,
            });
        }

        let d = h.c;
        let embedding = layers::gap_forward(&h);
        let mut classifier_input = embedding.clone();
        let mut dropout_keep = None;
        if training && self.cfg.dropout > 0.0 {
            let keep = element_dropout_mask(embedding.len(), self.cfg.dropout, &rng.child("dropout", 0))?;
            let scale = T::from_f64_lossy(1.0 / (1.0 - self.cfg.dropout));
            for (v, k) in classifier_input.iter_mut().zip(&keep) {
                *v = if *k { *v * scale } else { T::zero() };
            }
            dropout_keep = Some(keep);
        }
        let k = self.cfg.num_classes;
        let logits = layers::linear_forward(
            &classifier_input,
            batch,
            d,
            params.values("fc.weight")?,
            params.values("fc.bias")?,
        );
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("fc"));
        }
        Ok(ForwardPass {
            logits: Tensor::new(vec![batch, k], logits, false)?,
            embedding: Tensor::new(vec![batch, d], embedding, false)?,
            decisions,
            mode,
            batch,
            stem,
            blocks,
            last_shape: (h.c, h.n, h.h, h.w),
            classifier_input,
            dropout_keep,
            bn_stats,
        })
    }

    /// Backpropagate upstream gradients on the logits and/or the embedding.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        pass: &ForwardPass<T>,
        dlogits: Option<&[T]>,
        dembedding: Option<&[T]>,
        need_input_grad: bool,
    ) -> Result<Gradients<T>> {
        let training = pass.mode == Mode::Train;
        let batch = pass.batch;
        let d = self.cfg.embedding_dim();
        let k = self.cfg.num_classes;
        let mut grads = Vec::new();

        let mut demb = vec![T::zero(); batch * d];
        if let Some(dl) = dlogits {
            if dl.len() != batch * k {
                return Err(Error::structural(format!("logit gradient has {} entries, expected {}", dl.len(), batch * k)));
            }
            let (dw, db, mut dx) =
                layers::linear_backward(dl, &pass.classifier_input, batch, d, params.values("fc.weight")?, k);
            grads.push(("fc.weight".to_string(), dw));
            grads.push(("fc.bias".to_string(), db));
            if let Some(keep) = &pass.dropout_keep {
                let scale = T::from_f64_lossy(1.0 / (1.0 - self.cfg.dropout));
                for (g, k) in dx.iter_mut().zip(keep) {
                    *g = if *k { *g * scale } else { T::zero() };
                }
            }
            demb = dx;
        } else {
            grads.push(("fc.weight".to_string(), vec![T::zero(); k * d]));
            grads.push(("fc.bias".to_string(), vec![T::zero(); k]));
        }
        if let Some(de) = dembedding {
            if de.len() != batch * d {
                return Err(Error::structural(format!("embedding gradient has {} entries, expected {}", de.len(), batch * d)));
            }
            for (a, b) in demb.iter_mut().zip(de) {
                *a = *a + *b;
            }
        }

        let mut dh = layers::gap_backward(&demb, pass.last_shape);
        for (spec, tr) in self.blocks.iter().zip(&pass.blocks).rev() {
            let p = &spec.prefix;
            layers::relu_backward_inplace(&mut dh, &tr.out);
            let (dg2, db2, dc2) =
                layers::bn_backward(&dh, params.values(&format!("{p}.bn2.gamma"))?, &tr.bn2, training);
            let w2 = params.values(&format!("{p}.conv2.weight"))?;
            let (dw2, dr1) = layers::conv_backward(&dc2, w2, &spec.conv2, &tr.conv2, true);
            let mut dr1 = dr1.expect("requested");
            layers::relu_backward_inplace(&mut dr1, &tr.relu1);
            let (dg1, db1, dc1) =
                layers::bn_backward(&dr1, params.values(&format!("{p}.bn1.gamma"))?, &tr.bn1, training);
            let w1 = params.values(&format!("{p}.conv1.weight"))?;
            let (dw1, dx) = layers::conv_backward(&dc1, w1, &spec.conv1, &tr.conv1, true);
            let mut dx = dx.expect("requested");
            match (&spec.shortcut, &tr.shortcut) {
                (Some(g), Some((sc_conv, sc_bn))) => {
                    let (dgs, dbs, dcs) =
                        layers::bn_backward(&dh, params.values(&format!("{p}.shortcut.bn.gamma"))?, sc_bn, training);
                    let ws = params.values(&format!("{p}.shortcut.conv.weight"))?;
                    let (dws, dxs) = layers::conv_backward(&dcs, ws, g, sc_conv, true);
                    layers::add_inplace(&mut dx, &dxs.expect("requested"));
                    grads.push((format!("{p}.shortcut.conv.weight"), dws));
                    grads.push((format!("{p}.shortcut.bn.gamma"), dgs));
                    grads.push((format!("{p}.shortcut.bn.beta"), dbs));
                }
                _ => layers::add_inplace(&mut dx, &dh),
            }
            grads.push((format!("{p}.conv1.weight"), dw1));
            grads.push((format!("{p}.bn1.gamma"), dg1));
            grads.push((format!("{p}.bn1.beta"), db1));
            grads.push((format!("{p}.conv2.weight"), dw2));
            grads.push((format!("{p}.bn2.gamma"), dg2));
            grads.push((format!("{p}.bn2.beta"), db2));
            dh = dx;
        }

        let st = &pass.stem;
        let mut ds = layers::maxpool_backward(&dh, &st.pool);
        if let Some(keep) = &st.channel_keep {
            let scale = T::from_f64_lossy(1.0 / (1.0 - self.cfg.spatial_dropout));
            let hw = ds.h * ds.w;
            for c in 0..ds.c {
                for b in 0..batch {
                    let kept = keep[b * ds.c + c];
                    for g in &mut ds.data[(c * batch + b) * hw..(c * batch + b + 1) * hw] {
                        *g = if kept { *g * scale } else { T::zero() };
                    }
                }
            }
        }
        if let Some(mask) = &st.lfm_mask {
            for (g, m) in ds.data.iter_mut().zip(mask) {
                if *m {
                    *g = T::zero();
                }
            }
        }
        let masking_input = ds.to_nchw();
        layers::relu_backward_inplace(&mut ds, &st.relu_out);
        let (dgs, dbs, dconv) = layers::bn_backward(&ds, params.values("stem.bn.gamma")?, &st.bn, training);
        let (dws, dx) =
            layers::conv_backward(&dconv, params.values("stem.conv.weight")?, &self.stem, &st.conv, need_input_grad);
        grads.push(("stem.conv.weight".to_string(), dws));
        grads.push(("stem.bn.gamma".to_string(), dgs));
        grads.push(("stem.bn.beta".to_string(), dbs));

        for (name, g) in &grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("gradient of {name}")));
            }
        }
        Ok(Gradients {
            params: grads,
            input: dx.map(|a| a.to_nchw()),
            masking_input,
        })
    }
}

/// Architecture plus parameters, with a counter of input-gradient requests.
#[derive(Debug)]
pub struct Model<T> {
    pub net: MiniResNet,
    pub params: ParamSet<T>,
    input_grad_calls: AtomicUsize,
}

impl<T: Scalar> Clone for Model<T> {
    fn clone(&self) -> Self {
        Self::new(self.net.clone(), self.params.clone()).expect("cloned parameters match")
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(net: MiniResNet, params: ParamSet<T>) -> Result<Self> {
        net.check_params(&params)?;
        Ok(Self {
            net,
            params,
            input_grad_calls: AtomicUsize::new(0),
        })
    }

    /// Eval-mode embeddings, computed in chunks of `chunk` samples.
    pub fn embed(&self, images: &FeatureBlock<T>, chunk: usize) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(images.batch() * self.net.cfg.embedding_dim());
        let rng = RngStream::new(0);
        let mut start = 0;
        while start < images.batch() {
            let end = (start + chunk.max(1)).min(images.batch());
            let part = images.slice_samples(start..end)?;
            let pass = self.net.forward(&self.params, &part, Mode::Eval, &rng)?;
            out.extend_from_slice(&pass.embedding.values);
            start = end;
        }
        Ok(out)
    }

    /// Eval-mode embeddings and the gradient of `sum(dembedding . embedding)`
    /// with respect to the input images.
    pub fn embedding_input_grad(
        &self,
        images: &FeatureBlock<T>,
        upstream: impl Fn(&[T]) -> Vec<T>,
    ) -> Result<(Vec<T>, Vec<T>)> {
        self.input_grad_calls.fetch_add(1, Ordering::Relaxed);
        let pass = self.net.forward(&self.params, images, Mode::Eval, &RngStream::new(0))?;
        let demb = upstream(&pass.embedding.values);
        let grads = self.net.backward(&self.params, &pass, None, Some(&demb), true)?;
        let input = grads.input.expect("input gradient requested");
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("input gradient"));
        }
        Ok((pass.embedding.values, input))
    }

    /// Number of times an input gradient was computed through this model.
    pub fn input_grad_calls(&self) -> usize {
        self.input_grad_calls.load(Ordering::Relaxed)
    }
}
