//! `LFMD` dataset files and CSV manifests.
//!
//! Header: `"LFMD"`, version `u32 = 1`, count `u32`, H `u16`, W `u16`,
//! C `u16`, cameras `u16`. Records: identity `u32`, camera `u16`, then
//! `C * H * W` bytes, channel-first row-major. Little-endian throughout.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Sample, IMAGE_C, IMAGE_H, IMAGE_W};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"LFMD";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 20;
pub const RECORD_BYTES: usize = 4 + 2 + IMAGE_C * IMAGE_H * IMAGE_W;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + ds.samples.len() * RECORD_BYTES);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.samples.len() as u32).to_le_bytes());
    for v in [IMAGE_H, IMAGE_W, IMAGE_C, ds.n_cams] {
        out.extend_from_slice(&(v as u16).to_le_bytes());
    }
    for s in &ds.samples {
        out.extend_from_slice(&s.identity.to_le_bytes());
        out.extend_from_slice(&s.camera.to_le_bytes());
        out.extend_from_slice(&s.pixels);
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_BYTES {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(format_err(0, "bad dataset magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap()) as usize;
    let version = u32_at(4);
    if version != DATASET_VERSION {
        return Err(format_err(4, format!("unsupported dataset version {version}")));
    }
    let count = u32_at(8) as usize;
    let (h, w, c, n_cams) = (u16_at(12), u16_at(14), u16_at(16), u16_at(18));
    if (h, w, c) != (IMAGE_H, IMAGE_W, IMAGE_C) {
        return Err(format_err(12, format!("image shape {c}x{h}x{w} is not {IMAGE_C}x{IMAGE_H}x{IMAGE_W}")));
    }
    let expected = HEADER_BYTES + count * RECORD_BYTES;
    if bytes.len() < expected {
        let record = (bytes.len() - HEADER_BYTES) / RECORD_BYTES;
        return Err(format_err(HEADER_BYTES + record * RECORD_BYTES, format!("truncated in record {record} of {count}")));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after the last record"));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let o = HEADER_BYTES + i * RECORD_BYTES;
        let camera = u16_at(o + 4);
        if camera >= n_cams {
            return Err(format_err(o + 4, format!("camera {camera} outside [0, {n_cams})")));
        }
        samples.push(Sample {
            identity: u32_at(o),
            camera: camera as u16,
            pixels: bytes[o + 6..o + RECORD_BYTES].to_vec(),
        });
    }
    Ok(Dataset { n_cams, samples })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// Import images listed in a `path,identity,camera` CSV (header row
/// optional). Images must be 64x32; relative paths resolve against the
/// manifest's directory.
pub fn import_manifest(manifest: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (line_no == 0 && line.starts_with("path")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Input(format!("{}:{}: expected path,identity,camera", manifest.display(), line_no + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let identity: u32 = fields[1].parse().map_err(|_| bad())?;
        let camera: u16 = fields[2].parse().map_err(|_| bad())?;
        let path = base.join(fields[0]);
        let img = image::open(&path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
            .to_rgb8();
        if (img.height() as usize, img.width() as usize) != (IMAGE_H, IMAGE_W) {
            return Err(Error::Input(format!(
                "{} is {}x{}, expected {IMAGE_W}x{IMAGE_H}",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        let mut pixels = vec![0u8; IMAGE_C * IMAGE_H * IMAGE_W];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..IMAGE_C {
                pixels[(c * IMAGE_H + y as usize) * IMAGE_W + x as usize] = p[c];
            }
        }
        samples.push(Sample { pixels, identity, camera });
    }
    let n_cams = samples.iter().map(|s| s.camera as usize + 1).max().unwrap_or(0).max(2);
    Ok(Dataset { n_cams, samples })
}
