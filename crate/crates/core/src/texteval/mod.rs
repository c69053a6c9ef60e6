//! Text detection side of the system: region-score providers used by the
//! text loss, Gaussian targets, box extraction, ICDAR-style matching and
//! two-stage spotting accuracy.

mod geometry;
mod heatmap;
mod matching;
mod provider;
mod spotting;

pub use geometry::{intersection_area, iou, polygon_area};
pub use heatmap::{detect_boxes, synth_region_target, DetectConfig};
pub use matching::{
    h_mean, match_detections, DetectionCounts, DetectionMatch, DetectionScores, DONT_CARE_COVERAGE,
};
pub use provider::{
    load_provider, region_score, train_region_net, ConstantProvider, Craft, LumaPoolProvider,
    MiniRegionNet, RegionNetTrainConfig, RegionScoreProvider,
};
pub use spotting::{
    crop_box, spotting_accuracy, spotting_counts, words_match, CommandRecognizer, SpottingCounts,
    WordRecognizer,
};

use candle_core::{DType, Device};

use crate::domain::{GrayMap, ImageTensor, TextBox};
use crate::error::Result;

/// Runs `provider` on one image and extracts boxes from its heatmaps.
pub fn detect_text(
    image: &ImageTensor,
    provider: &dyn RegionScoreProvider,
    config: &DetectConfig,
) -> Result<Vec<TextBox>> {
    let t = image.to_tensor(DType::F32, &Device::Cpu)?;
    let region = GrayMap::from_tensor(&provider.region_score(&t)?)?;
    let affinity = provider
        .affinity_score(&t)?
        .map(|a| GrayMap::from_tensor(&a))
        .transpose()?;
    Ok(detect_boxes(&region, affinity.as_ref(), config))
}
