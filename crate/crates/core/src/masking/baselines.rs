//! Regularizers that local feature masking is compared against.

use crate::error::{Error, Result};
use crate::masking::FeatureBlock;
use crate::rng::RngStream;
use crate::scalar::Scalar;

fn check_drop_rate(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::config(format!("drop rate {q} outside [0, 1)")));
    }
    Ok(())
}

/// Clipped row/column span of a square of side `side` centered at `center`.
pub fn cutout_span(center: usize, side: usize, limit: usize) -> (usize, usize) {
    let start = center as isize - (side / 2) as isize;
    let end = start + side as isize;
    (start.max(0) as usize, (end.min(limit as isize)).max(0) as usize)
}

/// Cutout: one square per sample, centered at a uniform pixel, clipped to
/// the image and applied across every channel.
///
/// Sample `b` draws from `rng.child("cutout", b)`.
pub fn cutout_apply<T: Scalar>(
    images: &FeatureBlock<T>,
    side_px: usize,
    fill: f64,
    rng: &RngStream,
    training: bool,
) -> Result<FeatureBlock<T>> {
    let (b, c, h, w) = images.dims();
    if side_px == 0 || side_px > 2 * h.min(w) {
        return Err(Error::config(format!(
            "cutout side {side_px} must be in [1, {}]",
            2 * h.min(w)
        )));
    }
    let mut out = images.clone();
    if !training {
        return Ok(out);
    }
    let value = T::from_f64_lossy(fill);
    for sample in 0..b {
        let mut r = rng.child("cutout", sample as u64);
        let cy = r.uniform_int(h);
        let cx = r.uniform_int(w);
        let (y0, y1) = cutout_span(cy, side_px, h);
        let (x0, x1) = cutout_span(cx, side_px, w);
        for channel in 0..c {
            let plane = out.plane_mut(sample, channel);
            for y in y0..y1 {
                plane[y * w + x0..y * w + x1].fill(value);
            }
        }
    }
    Ok(out)
}

/// Keep-mask for channel dropout, one entry per `(sample, channel)`.
pub fn channel_dropout_mask(batch: usize, channels: usize, q: f64, rng: &RngStream) -> Result<Vec<bool>> {
    check_drop_rate(q)?;
    let mut keep = Vec::with_capacity(batch * channels);
    for sample in 0..batch {
        let mut r = rng.child("channel-dropout", sample as u64);
        keep.extend((0..channels).map(|_| !r.bernoulli(q)));
    }
    Ok(keep)
}

/// Spatial dropout: zero whole channels with probability `q` and scale the
/// survivors by `1 / (1 - q)`.
pub fn channel_dropout_apply<T: Scalar>(
    block: &FeatureBlock<T>,
    q: f64,
    rng: &RngStream,
    training: bool,
) -> Result<FeatureBlock<T>> {
    check_drop_rate(q)?;
    let mut out = block.clone();
    if !training || q == 0.0 {
        return Ok(out);
    }
    let (b, c, _, _) = block.dims();
    let keep = channel_dropout_mask(b, c, q, rng)?;
    let scale = T::from_f64_lossy(1.0 / (1.0 - q));
    for sample in 0..b {
        for channel in 0..c {
            let plane = out.plane_mut(sample, channel);
            if keep[sample * c + channel] {
                plane.iter_mut().for_each(|v| *v = *v * scale);
            } else {
                plane.fill(T::zero());
            }
        }
    }
    Ok(out)
}

/// Keep-mask for element dropout over `len` elements.
pub fn element_dropout_mask(len: usize, q: f64, rng: &RngStream) -> Result<Vec<bool>> {
    check_drop_rate(q)?;
    let mut r = rng.child("element-dropout", 0);
    Ok((0..len).map(|_| !r.bernoulli(q)).collect())
}

/// Inverted dropout on a flat array.
pub fn element_dropout_apply<T: Scalar>(values: &[T], q: f64, rng: &RngStream, training: bool) -> Result<Vec<T>> {
    check_drop_rate(q)?;
    if !training || q == 0.0 {
        return Ok(values.to_vec());
    }
    let keep = element_dropout_mask(values.len(), q, rng)?;
    let scale = T::from_f64_lossy(1.0 / (1.0 - q));
    Ok(values
        .iter()
        .zip(keep)
        .map(|(v, k)| if k { *v * scale } else { T::zero() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(dims: (usize, usize, usize, usize)) -> FeatureBlock<f64> {
        FeatureBlock::filled(dims, 1.0).unwrap()
    }

    #[test]
    fn cutout_clips_at_the_corner() {
        assert_eq!(cutout_span(0, 8, 64), (0, 4));
        assert_eq!(cutout_span(31, 8, 32), (27, 32));
        assert_eq!(cutout_span(10, 8, 64), (6, 14));
        assert_eq!(cutout_span(0, 7, 64), (0, 4));
    }

    #[test]
    fn cutout_masks_all_channels_identically() {
        let images = ones((3, 3, 16, 8));
        let out = cutout_apply(&images, 6, 0.0, &RngStream::new(4), true).unwrap();
        for b in 0..3 {
            assert_eq!(out.plane(b, 0), out.plane(b, 1));
            assert_eq!(out.plane(b, 0), out.plane(b, 2));
            assert!(out.plane(b, 0).contains(&0.0));
        }
    }

    #[test]
    fn cutout_eval_and_bad_side() {
        let images = ones((1, 3, 8, 4));
        assert_eq!(cutout_apply(&images, 4, 0.0, &RngStream::new(0), false).unwrap(), images);
        assert!(cutout_apply(&images, 9, 0.0, &RngStream::new(0), true).is_err());
        assert!(cutout_apply(&images, 0, 0.0, &RngStream::new(0), true).is_err());
    }

    #[test]
    fn channel_dropout_scales_survivors() {
        let block = ones((8, 16, 2, 2));
        assert_eq!(channel_dropout_apply(&block, 0.0, &RngStream::new(1), true).unwrap(), block);
        let out = channel_dropout_apply(&block, 0.5, &RngStream::new(1), true).unwrap();
        let mut dropped = 0;
        for b in 0..8 {
            for c in 0..16 {
                let p = out.plane(b, c);
                assert!(p.iter().all(|v| *v == 2.0) || p.iter().all(|v| *v == 0.0));
                dropped += usize::from(p[0] == 0.0);
            }
        }
        assert!(dropped > 0 && dropped < 128);
        assert!(channel_dropout_apply(&block, 1.0, &RngStream::new(1), true).is_err());
    }

    #[test]
    fn element_dropout_identity_cases() {
        let v = vec![0.5f32, -1.0, 3.0];
        assert_eq!(element_dropout_apply(&v, 0.0, &RngStream::new(0), true).unwrap(), v);
        assert_eq!(element_dropout_apply(&v, 0.9, &RngStream::new(0), false).unwrap(), v);
        assert!(element_dropout_apply(&v, 1.0, &RngStream::new(0), true).is_err());
    }
}
