//! Local feature masking.
//!
//! Per training sample: with probability `p` pick `N` distinct channels and,
//! in each, overwrite one randomly shaped rectangle with a random constant
//! drawn from `[0, 1)`. Surviving activations are left untouched (no
//! rescaling).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::masking::FeatureBlock;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LfmConfig {
    pub probability: f64,
    pub num_masked_channels: usize,
    pub area_low: f64,
    pub area_high: f64,
    pub aspect_low: f64,
    pub aspect_high: f64,
    pub max_attempts: usize,
}

impl LfmConfig {
    /// Base settings for a feature map with `channels` channels: half the
    /// channels, masking probability 0.15, area ratio in `[0.03, 0.4]`,
    /// aspect ratio in `[0.3, 1/0.3]`.
    pub fn for_channels(channels: usize) -> Self {
        Self {
            probability: 0.15,
            num_masked_channels: channels / 2,
            area_low: 0.03,
            area_high: 0.4,
            aspect_low: 0.3,
            aspect_high: 1.0 / 0.3,
            max_attempts: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config(format!("lfm probability {} outside [0, 1]", self.probability)));
        }
        if !(self.area_low > 0.0 && self.area_low <= self.area_high && self.area_high < 1.0) {
            return Err(Error::config(format!(
                "lfm area range [{}, {}] must satisfy 0 < low <= high < 1",
                self.area_low, self.area_high
            )));
        }
        if !(self.aspect_low > 0.0 && self.aspect_low <= self.aspect_high && self.aspect_high.is_finite()) {
            return Err(Error::config(format!(
                "lfm aspect range [{}, {}] must satisfy 0 < low <= high",
                self.aspect_low, self.aspect_high
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("lfm max_attempts must be positive"));
        }
        Ok(())
    }

    fn validate_for(&self, channels: usize) -> Result<()> {
        self.validate()?;
        if self.num_masked_channels > channels {
            return Err(Error::config(format!(
                "lfm masks {} channels but the block has {channels}",
                self.num_masked_channels
            )));
        }
        Ok(())
    }
}

impl Default for LfmConfig {
    fn default() -> Self {
        Self::for_channels(16)
    }
}

/// One masked rectangle on one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRect {
    pub x0: usize,
    pub y0: usize,
    pub w_px: usize,
    pub h_px: usize,
    pub fill: f64,
    /// Real-valued area before rounding, as a fraction of `H * W`.
    pub area_fraction: f64,
    pub aspect: f64,
}

impl MaskRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.h_px && x >= self.x0 && x < self.x0 + self.w_px
    }
}

/// Randomness consumed for one sample, sufficient to replay the masking.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskDecision {
    pub sample_id: usize,
    /// Gate draw; `None` when masking ran in eval mode and consumed nothing.
    pub gate_draw: Option<f64>,
    pub applied: bool,
    pub channels: Vec<usize>,
    /// `(channel, rect)`; the rect is absent when every attempt was rejected.
    pub rects: Vec<(usize, Option<MaskRect>)>,
}

impl MaskDecision {
    pub fn untouched(sample_id: usize, gate_draw: Option<f64>) -> Self {
        Self {
            sample_id,
            gate_draw,
            applied: false,
            channels: Vec::new(),
            rects: Vec::new(),
        }
    }

    /// Log record: `sample_id applied p1 channels=[..] rects=[(c,x0,y0,w,h,fill)..]`.
    pub fn log_line(&self) -> String {
        let mut line = String::new();
        let gate = match self.gate_draw {
            Some(p1) => format_sig9(p1),
            None => "-".to_string(),
        };
        let channels: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        let _ = write!(
            line,
            "{} {} {} channels=[{}] rects=[",
            self.sample_id,
            u8::from(self.applied),
            gate,
            channels.join(",")
        );
        let mut first = true;
        for (c, rect) in &self.rects {
            if let Some(r) = rect {
                if !first {
                    line.push(',');
                }
                first = false;
                let _ = write!(line, "({},{},{},{},{},{})", c, r.x0, r.y0, r.w_px, r.h_px, format_sig9(r.fill));
            }
        }
        line.push(']');
        line
    }
}

/// Nine significant digits, scientific notation.
pub fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Render a whole decision list, one record per line.
pub fn decision_log(decisions: &[MaskDecision]) -> String {
    let mut out = String::new();
    for d in decisions {
        out.push_str(&d.log_line());
        out.push('\n');
    }
    out
}

/// Rejection-sample one rectangle on an `height x width` grid.
///
/// Draw order per attempt is fixed: area, aspect, column, row.
pub fn sample_mask_rect(rng: &mut RngStream, height: usize, width: usize, cfg: &LfmConfig) -> Option<MaskRect> {
    let area = (height * width) as f64;
    for _ in 0..cfg.max_attempts {
        let s_e = rng.uniform_real(cfg.area_low, cfg.area_high) * area;
        let r_e = rng.uniform_real(cfg.aspect_low, cfg.aspect_high);
        let h_e = (s_e * r_e).sqrt();
        let w_e = (s_e / r_e).sqrt();
        let x_e = rng.uniform_int(width);
        let y_e = rng.uniform_int(height);
        if x_e as f64 + w_e <= width as f64 && y_e as f64 + h_e <= height as f64 {
            return Some(MaskRect {
                x0: x_e,
                y0: y_e,
                w_px: (w_e.floor() as usize).max(1),
                h_px: (h_e.floor() as usize).max(1),
                fill: 0.0,
                area_fraction: s_e / area,
                aspect: r_e,
            });
        }
    }
    None
}

/// `count` distinct channels drawn uniformly without replacement from `[0, channels)`.
pub fn select_channels(rng: &mut RngStream, channels: usize, count: usize) -> Result<Vec<usize>> {
    if count > channels {
        return Err(Error::config(format!("cannot select {count} of {channels} channels")));
    }
    let mut pool: Vec<usize> = (0..channels).collect();
    for i in 0..count {
        let j = i + rng.uniform_int(channels - i);
        pool.swap(i, j);
    }
    pool.truncate(count);
    Ok(pool)
}

/// Convert a fill draw into the block's element type, keeping it below 1.
pub(crate) fn fill_value<T: Scalar>(fill: f64) -> T {
    let v = T::from_f64_lossy(fill);
    if v >= T::one() {
        T::one() - T::epsilon() / (T::one() + T::one())
    } else {
        v
    }
}

/// Draw the masking decision for one sample of a `channels x height x width` map.
pub fn draw_decision(
    rng: &mut RngStream,
    sample_id: usize,
    channels: usize,
    height: usize,
    width: usize,
    cfg: &LfmConfig,
) -> Result<MaskDecision> {
    let p1 = rng.uniform_real(0.0, 1.0);
    if p1 >= cfg.probability {
        return Ok(MaskDecision::untouched(sample_id, Some(p1)));
    }
    let picked = select_channels(rng, channels, cfg.num_masked_channels)?;
    let mut rects = Vec::with_capacity(picked.len());
    for &c in &picked {
        let fill = rng.uniform_real(0.0, 1.0);
        let rect = sample_mask_rect(rng, height, width, cfg).map(|r| MaskRect { fill, ..r });
        rects.push((c, rect));
    }
    Ok(MaskDecision {
        sample_id,
        gate_draw: Some(p1),
        applied: true,
        channels: picked,
        rects,
    })
}

/// Write recorded decisions into `block`. Decisions are matched to samples by
/// position in the slice.
pub fn replay_decisions<T: Scalar>(block: &mut FeatureBlock<T>, decisions: &[MaskDecision]) -> Result<()> {
    let (b, c, h, w) = block.dims();
    if decisions.len() != b {
        return Err(Error::structural(format!("{} decisions for a batch of {b}", decisions.len())));
    }
    for (sample, decision) in decisions.iter().enumerate() {
        if !decision.applied {
            continue;
        }
        for (channel, rect) in &decision.rects {
            let Some(rect) = rect else { continue };
            if *channel >= c || rect.x0 + rect.w_px > w || rect.y0 + rect.h_px > h {
                return Err(Error::structural(format!(
                    "decision for sample {sample} does not fit a {c}x{h}x{w} map"
                )));
            }
            let value = fill_value::<T>(rect.fill);
            let plane = block.plane_mut(sample, *channel);
            for y in rect.y0..rect.y0 + rect.h_px {
                plane[y * w + rect.x0..y * w + rect.x0 + rect.w_px].fill(value);
            }
        }
    }
    Ok(())
}

/// Apply local feature masking to a block.
///
/// Each sample `b` draws from the substream `rng.child("lfm-sample", b)`, so
/// the result does not depend on processing order. In eval mode the block is
/// returned unchanged and no randomness is consumed.
pub fn lfm_apply<T: Scalar>(
    block: &FeatureBlock<T>,
    cfg: &LfmConfig,
    rng: &RngStream,
    training: bool,
) -> Result<(FeatureBlock<T>, Vec<MaskDecision>)> {
    let (b, c, h, w) = block.dims();
    cfg.validate_for(c)?;
    if !training {
        let decisions = (0..b).map(|s| MaskDecision::untouched(s, None)).collect();
        return Ok((block.clone(), decisions));
    }
    let decisions = (0..b)
        .map(|s| {
            let mut sample_rng = rng.child("lfm-sample", s as u64);
            draw_decision(&mut sample_rng, s, c, h, w, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = block.clone();
    replay_decisions(&mut out, &decisions)?;
    Ok((out, decisions))
}

/// Element mask (`true` = overwritten) for a block of `dims` under `decisions`.
pub fn masked_elements(dims: (usize, usize, usize, usize), decisions: &[MaskDecision]) -> Vec<bool> {
    let (b, c, h, w) = dims;
    let mut mask = vec![false; b * c * h * w];
    for (sample, decision) in decisions.iter().enumerate().take(b) {
        if !decision.applied {
            continue;
        }
        for (channel, rect) in &decision.rects {
            let Some(rect) = rect else { continue };
            let base = (sample * c + channel) * h * w;
            for y in rect.y0..(rect.y0 + rect.h_px).min(h) {
                for x in rect.x0..(rect.x0 + rect.w_px).min(w) {
                    mask[base + y * w + x] = true;
                }
            }
        }
    }
    mask
}
