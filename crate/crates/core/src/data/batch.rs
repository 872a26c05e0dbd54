use crate::data::{Dataset, IMAGE_C, IMAGE_H, IMAGE_W};
use crate::error::{Error, Result};
use crate::masking::{cutout_apply, FeatureBlock};
use crate::rng::RngStream;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentFlags {
    /// Horizontal flip with probability 0.5.
    pub flip: bool,
    /// Zero-pad by this many pixels and crop back at a random offset (0 = off).
    pub pad_crop: usize,
    /// Cutout square `(side, fill)`.
    pub cutout: Option<(usize, f64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentRecord {
    pub flipped: bool,
    pub shift: (isize, isize),
}

/// Bytes to `[0, 1]`: `v / 255`.
pub fn normalize_pixels(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&v| f32::from(v) / 255.0).collect()
}

/// Flip and pad-crop one normalized `3 x 64 x 32` image.
pub fn augment_sample(image: &[f32], flags: &AugmentFlags, rng: &mut RngStream) -> (Vec<f32>, AugmentRecord) {
    let (h, w) = (IMAGE_H, IMAGE_W);
    let mut record = AugmentRecord::default();
    if flags.flip {
        record.flipped = rng.bernoulli(0.5);
    }
    if flags.pad_crop > 0 {
        let span = 2 * flags.pad_crop + 1;
        record.shift = (
            rng.uniform_int(span) as isize - flags.pad_crop as isize,
            rng.uniform_int(span) as isize - flags.pad_crop as isize,
        );
    }
    let mut out = vec![0.0f32; image.len()];
    for c in 0..IMAGE_C {
        for y in 0..h {
            let sy = y as isize + record.shift.0;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let fx = if record.flipped { w - 1 - x } else { x };
                let sx = fx as isize + record.shift.1;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(c * h + y) * w + x] = image[(c * h + sy as usize) * w + sx as usize];
            }
        }
    }
    (out, record)
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: FeatureBlock<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    pub records: Vec<AugmentRecord>,
}

/// Iterator over the batches of one epoch.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<(usize, usize)>,
    batch_size: usize,
    pos: usize,
    rng: RngStream,
    epoch: u64,
    augment: Option<AugmentFlags>,
}

/// Batches over `(sample index, label)` items.
///
/// Training batches are shuffled by `rng.derive("shuffle", epoch, 0)` and
/// augmented; evaluation batches keep item order and are never augmented.
/// The last batch may be short.
pub fn make_batches<'a>(
    dataset: &'a Dataset,
    items: &[(usize, usize)],
    batch_size: usize,
    rng: &RngStream,
    epoch: u64,
    augment: &AugmentFlags,
    train: bool,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if items.is_empty() {
        return Err(Error::config("cannot batch an empty split"));
    }
    if let Some((i, _)) = items.iter().find(|(i, _)| *i >= dataset.samples.len()) {
        return Err(Error::Input(format!("sample index {i} outside dataset")));
    }
    let mut order = items.to_vec();
    if train {
        rng.derive("shuffle", epoch, 0).shuffle(&mut order);
    }
    Ok(Batches {
        dataset,
        order,
        batch_size,
        pos: 0,
        rng: rng.clone(),
        epoch,
        augment: train.then(|| augment.clone()),
    })
}

impl Batches<'_> {
    fn build(&self, start: usize, end: usize) -> Result<Batch> {
        let per = IMAGE_C * IMAGE_H * IMAGE_W;
        let mut values = Vec::with_capacity((end - start) * per);
        let mut records = Vec::with_capacity(end - start);
        for (slot, &(idx, _)) in self.order[start..end].iter().enumerate() {
            let image = normalize_pixels(&self.dataset.samples[idx].pixels);
            match &self.augment {
                Some(flags) => {
                    let mut r = self.rng.derive("augment", self.epoch, (start + slot) as u64);
                    let (img, rec) = augment_sample(&image, flags, &mut r);
                    values.extend_from_slice(&img);
                    records.push(rec);
                }
                None => {
                    values.extend_from_slice(&image);
                    records.push(AugmentRecord::default());
                }
            }
        }
        let mut images = FeatureBlock::new((end - start, IMAGE_C, IMAGE_H, IMAGE_W), values)?;
        if let Some(AugmentFlags {
            cutout: Some((side, fill)),
            ..
        }) = &self.augment
        {
            let r = self.rng.derive("cutout", self.epoch, start as u64);
            images = cutout_apply(&images, *side, *fill, &r, true)?;
        }
        Ok(Batch {
            images,
            labels: self.order[start..end].iter().map(|(_, l)| *l).collect(),
            indices: self.order[start..end].iter().map(|(i, _)| *i).collect(),
            records,
        })
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let start = self.pos;
        let end = (start + self.batch_size).min(self.order.len());
        self.pos = end;
        Some(self.build(start, end))
    }
}
