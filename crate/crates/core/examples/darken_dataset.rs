//! Builds a synthetic low-light training set: bright text scenes with
//! annotations go in, a manifest of darkened / ground-truth pairs comes out.
//!
//! cargo run --release --example darken_dataset -- [out-dir] [count]

use std::path::PathBuf;

use lowlight_text::data::{load_dataset, synthetic_text_scene, DarkenSampler};
use lowlight_text::domain::{save_image, write_annotations};
use lowlight_text::pipeline::darken_command;
use lowlight_text::{Error, Result};

fn main() -> Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().unwrap_or_else(|| "darkened".into()).into();
    let count: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let bright = out.join("bright");
    std::fs::create_dir_all(&bright).map_err(|e| Error::Io { path: bright.clone(), source: e })?;
    for i in 0..count {
        let (img, boxes) = synthetic_text_scene(160, 224, i);
        save_image(&img, bright.join(format!("img_{i}.png")))?;
        write_annotations(&boxes, bright.join(format!("gt_img_{i}.txt")))?;
    }

    // Exposure scale uniform in [1/100, 1/30], read noise 0.01, gamma 2.2.
    let sampler = DarkenSampler { seed: 42, ..Default::default() };
    let manifest = darken_command(&bright, &out.join("dataset"), &sampler)?;
    for e in &manifest.entries {
        let p = e.darken.as_ref().expect("synthetic entries record their parameters");
        println!("{}: exposure x{:.4}, sigma {}", e.id, p.exposure_scale, p.read_noise_sigma);
    }

    let samples = load_dataset(&manifest, "train")?;
    for s in &samples {
        println!("{}: gt mean {:.3} -> low mean {:.4}, {} words", s.id, s.gt.mean(), s.low.mean(), s.boxes.len());
    }
    println!("manifest at {}", out.join("dataset/manifest.json").display());
    Ok(())
}
