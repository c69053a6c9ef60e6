//! Fits the edge estimator so that, from a low-light input, it predicts the
//! Sobel edges of the bright ground truth.
//!
//! cargo run --release --example edge_estimator -- [steps]

use lowlight_text::data::{darken, synthetic_text_scene, DarkenParams};
use lowlight_text::edge::{teacher_edges, train_edge_estimator, EdgeTrainConfig, SobelTeacher};
use lowlight_text::{estimate_edges, PairedSample, Result};

fn mean_abs(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

fn main() -> Result<()> {
    env_logger::init();
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);

    let samples = (0..3)
        .map(|i| {
            let (gt, boxes) = synthetic_text_scene(96, 96, 20 + i);
            let low = darken(&gt, &DarkenParams { exposure_scale: 0.04, seed: i, ..Default::default() });
            PairedSample::new(format!("scene{i}"), low, gt, boxes)
        })
        .collect::<Result<Vec<_>>>()?;

    let config = EdgeTrainConfig { steps, crop: Some(64), ..Default::default() };
    let outcome = train_edge_estimator(&samples, &config, &SobelTeacher)?;
    let h = &outcome.loss_history;
    println!("training MAE: first {:.4}, last {:.4}", h[0], h[h.len() - 1]);

    for s in &samples {
        let target = teacher_edges(&s.gt);
        let naive = teacher_edges(&s.low);
        let learned = estimate_edges(&s.low, &outcome.params)?;
        println!(
            "{}: Sobel on the dark image is off by {:.4}, the estimator by {:.4}",
            s.id,
            mean_abs(naive.data(), target.data()),
            mean_abs(learned.data(), target.data())
        );
    }
    Ok(())
}
