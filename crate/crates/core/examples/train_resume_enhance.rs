//! Short training run with a mid-run checkpoint, an exact resume, and
//! directory inference with the final checkpoint.
//!
//! cargo run --release --example train_resume_enhance -- [work-dir]

use std::path::PathBuf;

use lowlight_text::data::{darken, synthetic_text_scene, DarkenParams};
use lowlight_text::domain::{load_image, save_image};
use lowlight_text::enhancer::default_schedule;
use lowlight_text::pipeline::{enhance_command, psnr};
use lowlight_text::texteval::LumaPoolProvider;
use lowlight_text::{Checkpoint, Error, MsSsimParams, PairedSample, Result, TrainConfig, Trainer};

fn main() -> Result<()> {
    env_logger::init();
    let work: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "train_demo".into()).into();
    for d in ["low", "gt", "enhanced"] {
        let p = work.join(d);
        std::fs::create_dir_all(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }

    let samples = (0..3)
        .map(|i| {
            let (gt, boxes) = synthetic_text_scene(64, 64, 50 + i);
            let low = darken(&gt, &DarkenParams { exposure_scale: 0.05, seed: i, ..Default::default() });
            save_image(&low, work.join(format!("low/s{i}.png")))?;
            save_image(&gt, work.join(format!("gt/s{i}.png")))?;
            PairedSample::new(format!("s{i}"), low, gt, boxes)
        })
        .collect::<Result<Vec<_>>>()?;

    // Scaled-down network and crops; the luma stub stands in for a detector.
    let mut config = TrainConfig {
        epochs: 150,
        decay_epoch: 120,
        learning_rate: 1e-3,
        decayed_learning_rate: 1e-4,
        crop: 48,
        ms_ssim: MsSsimParams::with_scales(3)?,
        enhancer: default_schedule().scaled_down(4),
        ..TrainConfig::default()
    };
    config.toggles.edge = false;
    let detector = LumaPoolProvider;

    let mut trainer = Trainer::new(config, samples.clone(), &detector, None)?;
    let half = trainer.total_steps() / 2;
    trainer.run_steps(half)?;
    let ckpt_path = work.join("half.ckpt");
    trainer.save_checkpoint(&ckpt_path)?;

    // Continue both the original and a resumed copy: the losses agree exactly.
    let mut resumed = Trainer::resume(Checkpoint::load(&ckpt_path)?, samples.clone(), &detector)?;
    let a = trainer.run_steps(5)?;
    let b = resumed.run_steps(5)?;
    for (x, y) in a.iter().zip(&b) {
        println!("step {:3}: original {:.6}  resumed {:.6}", x.step, x.loss.total, y.loss.total);
        assert_eq!(x.loss, y.loss);
    }

    resumed.run(None)?;
    let last = resumed.log().last().expect("trained");
    println!("finished at step {} (epoch {}), lr {:.0e}", resumed.steps_done(), last.epoch, last.learning_rate);
    let final_path = work.join("final.ckpt");
    resumed.save_checkpoint(&final_path)?;

    enhance_command(&work.join("low"), &final_path, &work.join("enhanced"), true)?;
    for s in &samples {
        let out = load_image(work.join(format!("enhanced/{}.png", s.id)))?;
        println!("{}: PSNR {:.2} dB -> {:.2} dB", s.id, psnr(&s.low, &s.gt)?, psnr(&out, &s.gt)?);
    }
    Ok(())
}
