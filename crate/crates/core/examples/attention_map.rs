//! Computes the attention map of a dark synthetic scene and its 4-level
//! block-max pyramid, and writes them as PNGs.
//!
//! cargo run --release --example attention_map -- [out-dir]

use std::path::PathBuf;

use lowlight_text::attention::{attention_pyramid, PYRAMID_LEVELS};
use lowlight_text::data::{darken, synthetic_text_scene, DarkenParams};
use lowlight_text::domain::save_image;
use lowlight_text::Result;

fn main() -> Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "attention_out".into()).into();
    std::fs::create_dir_all(&out).map_err(|e| lowlight_text::Error::Io { path: out.clone(), source: e })?;

    let (gt, _) = synthetic_text_scene(128, 192, 3);
    let low = darken(&gt, &DarkenParams { exposure_scale: 1.0 / 25.0, ..Default::default() });
    let att = attention_pyramid(&low, PYRAMID_LEVELS)?;

    // Dark pixels get attention close to 1, bright ones close to 0.
    println!("low-light mean {:.4}, attention mean {:.4}", low.mean(), att.base.mean());
    save_image(&low, out.join("low.png"))?;
    save_image(&att.base.to_rgb(), out.join("attention.png"))?;
    for k in 1..=att.levels() {
        let level = att.level(k).expect("level exists");
        println!(
            "level {k}: {}x{}  mean {:.4}  max {:.4}",
            level.width(),
            level.height(),
            level.mean(),
            level.max_value()
        );
        save_image(&level.to_rgb(), out.join(format!("attention_level{k}.png")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
