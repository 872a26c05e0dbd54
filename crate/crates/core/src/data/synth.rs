//! Deterministic synthetic pedestrians.
//!
//! Each identity is a two-tone humanoid sprite (head, torso, legs) whose
//! appearance is a pure function of `(seed, id)`. Views add brightness,
//! translation, pixel noise, mirroring and an occasional occluding bar on a
//! camera-tinted textured background.

use crate::data::{Dataset, Sample, IMAGE_C, IMAGE_H, IMAGE_W};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct Identity {
    pub id: u32,
    pub torso_hue: f64,
    pub leg_hue: f64,
    pub head_radius: f64,
    pub body_width: f64,
    /// Figure height as a fraction of the image height.
    pub body_height: f64,
}

impl Identity {
    pub fn from_seed(seed: u64, id: u32) -> Self {
        let mut r = RngStream::new(seed).child("identity", u64::from(id));
        Self {
            id,
            torso_hue: r.uniform_real(0.0, 1.0),
            leg_hue: r.uniform_real(0.0, 1.0),
            head_radius: r.uniform_real(3.0, 5.0),
            body_width: r.uniform_real(8.0, 14.0),
            body_height: r.uniform_real(0.78, 0.92),
        }
    }
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const SKIN: [f64; 3] = [0.92, 0.76, 0.62];

/// Render one view of `ident` seen by `camera`.
pub fn render_view(seed: u64, ident: &Identity, view: usize, camera: usize) -> Vec<u8> {
    let (h, w) = (IMAGE_H, IMAGE_W);
    let mut r = RngStream::new(seed).derive("view", u64::from(ident.id), view as u64);
    let mut cam = RngStream::new(seed).child("camera", camera as u64);
    let cam_tint = [cam.uniform_real(0.25, 0.6), cam.uniform_real(0.25, 0.6), cam.uniform_real(0.25, 0.6)];

    let brightness = r.uniform_real(0.7, 1.3);
    let tx = r.uniform_int(7) as isize - 3;
    let ty = r.uniform_int(7) as isize - 3;
    let flip = r.bernoulli(0.5);
    let occlude = r.bernoulli(0.2);
    let stripe_freq = r.uniform_real(0.2, 0.8);
    let stripe_phase = r.uniform_real(0.0, std::f64::consts::TAU);
    let stripe_angle = r.uniform_real(0.0, std::f64::consts::PI);

    let mut img = vec![[0.0f64; 3]; h * w];
    let (sa, ca) = stripe_angle.sin_cos();
    for y in 0..h {
        for x in 0..w {
            let t = 0.08 * ((x as f64 * ca + y as f64 * sa) * stripe_freq + stripe_phase).sin();
            img[y * w + x] = [cam_tint[0] + t, cam_tint[1] + t, cam_tint[2] + t];
        }
    }

    let torso = hsv_to_rgb(ident.torso_hue, 0.8, 0.9);
    let legs = hsv_to_rgb(ident.leg_hue, 0.75, 0.6);
    let fig_h = ident.body_height * h as f64;
    let top = (h as f64 - fig_h) / 2.0 + ty as f64;
    let cx = w as f64 / 2.0 + tx as f64;
    let head_cy = top + ident.head_radius;
    let torso_top = top + 2.0 * ident.head_radius;
    let torso_bottom = top + 0.55 * fig_h;
    let feet = top + fig_h;
    let half = ident.body_width / 2.0;
    for y in 0..h {
        let yc = y as f64 + 0.5;
        for x in 0..w {
            let xc = x as f64 + 0.5;
            let px = &mut img[y * w + x];
            if (xc - cx).powi(2) + (yc - head_cy).powi(2) <= ident.head_radius.powi(2) {
                *px = SKIN;
            } else if yc >= torso_top && yc < torso_bottom && (xc - cx).abs() <= half {
                *px = torso;
            } else if yc >= torso_bottom && yc < feet {
                let off = (xc - cx).abs();
                if off >= 1.0 && off <= half - 0.5 {
                    *px = legs;
                }
            }
        }
    }

    if occlude {
        let bar_h = 4 + r.uniform_int(5);
        let y0 = r.uniform_int(h - bar_h);
        let shade = r.uniform_real(0.1, 0.9);
        for y in y0..y0 + bar_h {
            for x in 0..w {
                img[y * w + x] = [shade; 3];
            }
        }
    }

    let mut out = vec![0u8; IMAGE_C * h * w];
    for y in 0..h {
        for x in 0..w {
            let src_x = if flip { w - 1 - x } else { x };
            let px = img[y * w + src_x];
            for c in 0..IMAGE_C {
                let v = (px[c] * brightness + 0.02 * r.standard_normal()).clamp(0.0, 1.0);
                out[(c * h + y) * w + x] = (v * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Render `n_identities x views_per_id` samples; cameras are assigned
/// round-robin over views.
pub fn synth_generate(seed: u64, n_identities: usize, views_per_id: usize, n_cams: usize) -> Result<Dataset> {
    if n_identities < 2 || views_per_id < 2 || n_cams < 2 {
        return Err(Error::config(format!(
            "synthetic data needs >= 2 identities, views and cameras (got {n_identities}, {views_per_id}, {n_cams})"
        )));
    }
    if n_cams > u16::MAX as usize || n_identities > u32::MAX as usize {
        return Err(Error::config("identity or camera count out of range"));
    }
    let mut samples = Vec::with_capacity(n_identities * views_per_id);
    for id in 0..n_identities as u32 {
        let ident = Identity::from_seed(seed, id);
        for view in 0..views_per_id {
            let camera = view % n_cams;
            samples.push(Sample {
                pixels: render_view(seed, &ident, view, camera),
                identity: id,
                camera: camera as u16,
            });
        }
    }
    Ok(Dataset { n_cams, samples })
}
