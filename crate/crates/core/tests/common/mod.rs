//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use lfm::masking::{FeatureBlock, LfmConfig, MaskDecision};
use lfm::metrics::Labels;
use lfm::RngStream;

/// Probability that one rejection-loop attempt is accepted on an `h x w`
/// map, and the mean real area fraction of accepted attempts, by midpoint
/// integration over the (area, aspect) square. For fixed sides the
/// acceptance probability over the integer corner is exact:
/// `#{x : x + w_e <= W} / W`.
pub fn rect_attempt_oracle(h: usize, w: usize, cfg: &LfmConfig, grid: usize) -> (f64, f64) {
    let area = (h * w) as f64;
    let mut acc = 0.0;
    let mut acc_area = 0.0;
    for i in 0..grid {
        let frac = cfg.area_low + (cfg.area_high - cfg.area_low) * (i as f64 + 0.5) / grid as f64;
        let s = frac * area;
        for j in 0..grid {
            let r = cfg.aspect_low + (cfg.aspect_high - cfg.aspect_low) * (j as f64 + 0.5) / grid as f64;
            let he = (s * r).sqrt();
            let we = (s / r).sqrt();
            let fits = |side: f64, limit: usize| {
                if side > limit as f64 {
                    0.0
                } else {
                    ((limit as f64 - side).floor() + 1.0).min(limit as f64) / limit as f64
                }
            };
            let p = fits(we, w) * fits(he, h);
            acc += p;
            acc_area += p * frac;
        }
    }
    let cells = (grid * grid) as f64;
    (acc / cells, acc_area / acc)
}

/// Straight re-implementation of the rejection loop from raw draws:
/// returns `(attempts used, Some((x0, y0, w, h, area fraction)))`.
pub fn replay_rect(
    rng: &mut RngStream,
    h: usize,
    w: usize,
    cfg: &LfmConfig,
) -> (usize, Option<(usize, usize, usize, usize, f64)>) {
    let total = (h * w) as f64;
    let mut attempt = 0;
    while attempt < cfg.max_attempts {
        attempt += 1;
        let frac_draw = rng.uniform_real(cfg.area_low, cfg.area_high);
        let s_e = frac_draw * total;
        let r_e = rng.uniform_real(cfg.aspect_low, cfg.aspect_high);
        let x_e = rng.uniform_int(w);
        let y_e = rng.uniform_int(h);
        let h_e = (s_e * r_e).sqrt();
        let w_e = (s_e / r_e).sqrt();
        if (x_e as f64) + w_e > w as f64 || (y_e as f64) + h_e > h as f64 {
            continue;
        }
        let wp = std::cmp::max(1, w_e as usize);
        let hp = std::cmp::max(1, h_e as usize);
        return (attempt, Some((x_e, y_e, wp, hp, s_e / total)));
    }
    (attempt, None)
}

/// Checks one masked output against its input and decisions: every changed
/// element lies inside the recorded rect of a recorded channel, every rect
/// element holds that rect's fill, and rects are within bounds with area
/// fraction in `[area_low, area_high]`. Returns the number of channels per
/// sample that changed.
pub fn check_locality(
    input: &FeatureBlock<f32>,
    output: &FeatureBlock<f32>,
    decisions: &[MaskDecision],
    cfg: &LfmConfig,
) -> Result<Vec<usize>, String> {
    let (b, c, h, w) = input.dims();
    if output.dims() != input.dims() {
        return Err("masking changed the shape".into());
    }
    if decisions.len() != b {
        return Err(format!("{} decisions for {b} samples", decisions.len()));
    }
    let mut changed_per_sample = Vec::with_capacity(b);
    for (s, d) in decisions.iter().enumerate() {
        if d.sample_id != s {
            return Err(format!("decision {s} has sample id {}", d.sample_id));
        }
        if d.applied != d.gate_draw.is_some_and(|p1| p1 < cfg.probability) {
            return Err(format!("sample {s}: applied flag disagrees with gate draw"));
        }
        let mut distinct = d.channels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != d.channels.len() || distinct.iter().any(|&ch| ch >= c) {
            return Err(format!("sample {s}: channels {:?} not distinct in range", d.channels));
        }
        if d.applied && d.channels.len() != cfg.num_masked_channels {
            return Err(format!("sample {s}: {} channels, expected {}", d.channels.len(), cfg.num_masked_channels));
        }
        let mut changed = 0;
        for ch in 0..c {
            let rect = d.rects.iter().find(|(rc, _)| *rc == ch).and_then(|(_, r)| r.as_ref());
            if let Some(r) = rect {
                if r.x0 + r.w_px > w || r.y0 + r.h_px > h || r.w_px == 0 || r.h_px == 0 {
                    return Err(format!("sample {s} channel {ch}: rect out of bounds"));
                }
                if !(cfg.area_low..=cfg.area_high).contains(&r.area_fraction) {
                    return Err(format!("sample {s} channel {ch}: area fraction {}", r.area_fraction));
                }
                if !(0.0..1.0).contains(&r.fill) {
                    return Err(format!("sample {s} channel {ch}: fill {}", r.fill));
                }
            }
            let mut any = false;
            for y in 0..h {
                for x in 0..w {
                    let a = input.get(s, ch, y, x);
                    let o = output.get(s, ch, y, x);
                    match rect {
                        Some(r) if x >= r.x0 && x < r.x0 + r.w_px && y >= r.y0 && y < r.y0 + r.h_px => {
                            if o != r.fill as f32 && !(r.fill as f32 >= 1.0 && o < 1.0) {
                                return Err(format!("sample {s} channel {ch} ({y},{x}): {o} is not the fill {}", r.fill));
                            }
                            any |= o.to_bits() != a.to_bits();
                        }
                        _ => {
                            if o.to_bits() != a.to_bits() {
                                return Err(format!("sample {s} channel {ch} ({y},{x}) changed outside any rect"));
                            }
                        }
                    }
                }
            }
            changed += usize::from(any);
        }
        changed_per_sample.push(changed);
    }
    Ok(changed_per_sample)
}

/// Rank-k hits and AP for every query by direct counting: an item's rank is
/// one plus the number of valid items strictly ahead of it.
pub fn brute_force_eval(
    dist: &[f64],
    query: &Labels,
    gallery: &Labels,
    ks: &[usize],
    exclude_same_camera: bool,
) -> (Vec<f64>, f64, usize) {
    let ng = gallery.ids.len();
    let mut hits = vec![0usize; ks.len()];
    let mut ap_total = 0.0;
    let mut valid = 0;
    for q in 0..query.ids.len() {
        let ok = |g: usize| !(exclude_same_camera && gallery.ids[g] == query.ids[q] && gallery.cams[g] == query.cams[q]);
        let ahead = |g: usize, o: usize| {
            let (dg, d_o) = (dist[q * ng + g], dist[q * ng + o]);
            d_o < dg || (d_o == dg && o < g)
        };
        let rank = |g: usize| 1 + (0..ng).filter(|&o| ok(o) && ahead(g, o)).count();
        let relevant: Vec<usize> = (0..ng).filter(|&g| ok(g) && gallery.ids[g] == query.ids[q]).collect();
        if relevant.is_empty() {
            continue;
        }
        valid += 1;
        let ranks: Vec<usize> = relevant.iter().map(|&g| rank(g)).collect();
        let best = *ranks.iter().min().unwrap();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if best <= k {
                *h += 1;
            }
        }
        let mut ap = 0.0;
        for &r in &ranks {
            let relevant_at_or_above = ranks.iter().filter(|&&o| o <= r).count();
            ap += relevant_at_or_above as f64 / r as f64;
        }
        ap_total += ap / ranks.len() as f64;
    }
    let cmc = hits.iter().map(|&h| if valid == 0 { 0.0 } else { h as f64 / valid as f64 }).collect();
    (cmc, if valid == 0 { 0.0 } else { ap_total / valid as f64 }, valid)
}

/// Block filled with the sentinel 2.0, outside the fill range.
pub fn sentinel_block(b: usize, c: usize, h: usize, w: usize) -> FeatureBlock<f32> {
    FeatureBlock::filled((b, c, h, w), 2.0).unwrap()
}
