//! Text detection and spotting evaluation: a small region-score network is
//! fit on bright scenes, then bright and dark versions of held-out scenes
//! are scored with ICDAR-style precision / recall / H-mean.
//!
//! cargo run --release --example detect_and_spot

use std::cell::Cell;

use lowlight_text::data::{darken, synthetic_text_scene, DarkenParams};
use lowlight_text::pipeline::detect_on;
use lowlight_text::texteval::{
    match_detections, spotting_counts, train_region_net, DetectConfig, DetectionCounts, RegionNetTrainConfig,
    SpottingCounts,
};
use lowlight_text::{ImageTensor, Result, TextBox};

fn main() -> Result<()> {
    env_logger::init();
    let train: Vec<(ImageTensor, Vec<TextBox>)> = (0..6).map(|i| synthetic_text_scene(96, 128, i)).collect();
    let (net, history) = train_region_net(&train, &RegionNetTrainConfig { width: 8, steps: 400, ..Default::default() })?;
    println!("region net BCE {:.4} -> {:.4}", history[0], history[history.len() - 1]);

    let cfg = DetectConfig::default();
    for (label, scale) in [("bright", None), ("dark", Some(0.03))] {
        let mut det = DetectionCounts::default();
        let mut spot = SpottingCounts::default();
        for seed in 100..104 {
            let (gt_img, gt_boxes) = synthetic_text_scene(96, 128, seed);
            let img = match scale {
                Some(s) => darken(&gt_img, &DarkenParams { exposure_scale: s, seed, ..Default::default() }),
                None => gt_img,
            };
            let pred = detect_on(&img, &net, &cfg)?;
            let m = match_detections(&pred, &gt_boxes, 0.5);
            det += m.counts();
            // Stand-in for an OCR program: it reads the true word of each
            // matched box, in match order, but only when the crop has enough
            // contrast to be legible.
            let truth: Vec<String> = m.pairs.iter().map(|&(_, g, _)| gt_boxes[g].transcription.clone()).collect();
            let next = Cell::new(0);
            let reader = |crop: &ImageTensor| -> Result<String> {
                let i = next.replace(next.get() + 1);
                let luma = crop.luma();
                let spread = luma.max_value() - luma.data().iter().cloned().fold(f32::INFINITY, f32::min);
                Ok(if spread > 0.25 { truth[i].clone() } else { String::new() })
            };
            spot += spotting_counts(&img, &m, &pred, &gt_boxes, &reader);
        }
        let s = det.scores();
        println!(
            "{label:>6}: precision {:.3} recall {:.3} h-mean {:.3} | spotting accuracy {:.3}",
            s.precision,
            s.recall,
            s.hmean,
            spot.accuracy()
        );
    }
    Ok(())
}
