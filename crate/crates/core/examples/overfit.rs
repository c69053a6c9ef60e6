//! Overfits the enhancer on one synthetic 128x128 low/ground-truth pair with
//! the full objective (L1 + MS-SSIM + text loss) and reports PSNR / MS-SSIM.
//!
//! cargo run --release --example overfit -- [steps] [learning-rate]

use std::time::Instant;

use lowlight_text::data::{darken, synthetic_text_scene, DarkenParams};
use lowlight_text::enhancer::UNetSchedule;
use lowlight_text::losses::{ms_ssim, MsSsimParams};
use lowlight_text::pipeline::{enhance_image, psnr, pretrain_edge_estimator, ComponentToggles, TrainConfig, Trainer};
use lowlight_text::texteval::{train_region_net, RegionNetTrainConfig};
use lowlight_text::{PairedSample, Result};

fn main() -> Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let (gt, boxes) = synthetic_text_scene(128, 128, 7);
    let low = darken(&gt, &DarkenParams { exposure_scale: 1.0 / 20.0, read_noise_sigma: 0.0, gamma: 2.2, seed: 1 });
    let sample = PairedSample::new("scene", low.clone(), gt.clone(), boxes.clone())?;

    // Frozen helpers: a region-score net fit to this scene and an edge estimator.
    let (detector, _) = train_region_net(&[(gt.clone(), boxes)], &RegionNetTrainConfig { width: 8, steps: 150, ..Default::default() })?;

    let config = TrainConfig {
        epochs: steps,
        learning_rate: lr,
        decayed_learning_rate: lr / 10.0,
        decay_epoch: steps * 3 / 4,
        crop: 128,
        augment: false,
        ms_ssim: MsSsimParams::with_scales(4)?,
        enhancer: UNetSchedule { in_channels: 4, out_channels: 3, encoder: vec![16, 32, 64, 64], bottleneck: 128, leaky_slope: 0.2 },
        toggles: ComponentToggles::default(),
        ..TrainConfig::default()
    };
    let mut edge_cfg = config.clone();
    edge_cfg.edge.steps = 60;
    let edge = pretrain_edge_estimator(std::slice::from_ref(&sample), &edge_cfg)?;

    let started = Instant::now();
    let mut trainer = Trainer::new(config.clone(), vec![sample], &detector, Some(edge))?;
    while !trainer.is_finished() {
        let rec = trainer.step()?;
        if rec.step % 50 == 0 || trainer.is_finished() {
            println!(
                "step {:4}  total {:.5}  l1 {:.5}  1-ms-ssim {:.5}  text {:.5}  ({:.0}s)",
                rec.step,
                rec.loss.total,
                rec.loss.l1,
                rec.loss.ms_ssim,
                rec.loss.text,
                started.elapsed().as_secs_f64()
            );
        }
    }
    let (out, _) = enhance_image(&low, trainer.enhancer(), trainer.edge_estimator(), &config.toggles)?;
    println!("input  PSNR {:.2} dB", psnr(&low, &gt)?);
    println!("output PSNR {:.2} dB, MS-SSIM {:.4}", psnr(&out, &gt)?, ms_ssim(&out, &gt, &config.ms_ssim)?);
    Ok(())
}
