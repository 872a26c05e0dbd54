//! Generate the synthetic re-identification dataset, save it and export a
//! few views as PPM images.
//!
//! `cargo run --example synth_data -- [out_dir]`

use std::path::PathBuf;

use image::RgbImage;
use lfm::data::{load_dataset, save_dataset, synth_generate, SplitSpec, IMAGE_H, IMAGE_W};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_out".into()));
    std::fs::create_dir_all(&out)?;
    let ds = synth_generate(1, 75, 8, 4)?;
    let split = SplitSpec::new(&ds, 50)?;
    println!(
        "{} samples, {} identities: {} train items, {} queries, {} gallery",
        ds.samples.len(),
        ds.identities().len(),
        split.train.len(),
        split.query.len(),
        split.gallery.len()
    );
    let path = out.join("dataset.lfmd");
    save_dataset(&ds, &path)?;
    assert_eq!(load_dataset(&path)?, ds);
    std::fs::write(out.join("manifest.csv"), split.manifest_csv(&ds))?;

    let plane = IMAGE_H * IMAGE_W;
    for (i, s) in ds.samples.iter().take(16).enumerate() {
        let rgb: Vec<u8> = (0..plane).flat_map(|p| (0..3).map(move |c| c * plane + p)).map(|k| s.pixels[k]).collect();
        let img = RgbImage::from_raw(IMAGE_W as u32, IMAGE_H as u32, rgb).expect("buffer size");
        img.save_with_format(out.join(format!("id{}_cam{}_{i}.ppm", s.identity, s.camera)), image::ImageFormat::Pnm)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
