//! The three loss terms and their weighted total on progressively degraded
//! copies of a text scene.
//!
//! cargo run --release --example losses

use lowlight_text::data::synthetic_text_scene;
use lowlight_text::losses::{l1_loss, ms_ssim, text_detection_loss, total_loss};
use lowlight_text::texteval::{train_region_net, LumaPoolProvider, RegionNetTrainConfig};
use lowlight_text::{ImageTensor, LossToggles, LossWeights, MsSsimParams, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noisy(img: &ImageTensor, sigma: f32) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = Normal::new(0.0, sigma).expect("sigma is positive");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
    }
    out
}

fn main() -> Result<()> {
    let (gt, boxes) = synthetic_text_scene(176, 176, 5);
    let params = MsSsimParams::default();
    let weights = LossWeights::default();
    let (region_net, _) = train_region_net(&[(gt.clone(), boxes)], &RegionNetTrainConfig { width: 8, steps: 150, ..Default::default() })?;

    println!("{:>6} {:>8} {:>8} {:>10} {:>10} {:>8}", "sigma", "l1", "ms-ssim", "text/luma", "text/net", "total");
    for sigma in [0.01, 0.05, 0.1, 0.2] {
        let pred = noisy(&gt, sigma);
        let b = total_loss(&pred, &gt, &region_net, &weights, &params, &LossToggles::default())?;
        println!(
            "{sigma:>6} {:>8.5} {:>8.5} {:>10.5} {:>10.5} {:>8.5}",
            l1_loss(&pred, &gt)?,
            ms_ssim(&pred, &gt, &params)?,
            text_detection_loss(&pred, &gt, &LumaPoolProvider)?,
            b.text,
            b.total
        );
    }

    // A dim copy is close in L1 but its text regions have lost their contrast.
    let dim = gt.map(|v| v * 0.5);
    let b = total_loss(&dim, &gt, &region_net, &weights, &params, &LossToggles::default())?;
    println!("half-brightness copy: {b:#?}");
    Ok(())
}
