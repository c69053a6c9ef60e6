//! Two-stage spotting: crop each matched detection and score an external
//! word recognizer by case-insensitive exact match, without a lexicon.

use std::ops::{Add, AddAssign};
use std::path::PathBuf;
use std::process::Command;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::{save_image, ImageTensor, TextBox};
use crate::error::{Error, Result};
use crate::texteval::matching::DetectionMatch;

/// Crop-to-word recognizer plugin.
pub trait WordRecognizer {
    fn recognize(&self, crop: &ImageTensor) -> Result<String>;
}

impl<F> WordRecognizer for F
where
    F: Fn(&ImageTensor) -> Result<String>,
{
    fn recognize(&self, crop: &ImageTensor) -> Result<String> {
        self(crop)
    }
}

/// Runs an external program on each crop: the crop is written to a temporary
/// PNG whose path is the last argument, and the trimmed stdout is the word.
#[derive(Debug, Clone)]
pub struct CommandRecognizer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl WordRecognizer for CommandRecognizer {
    fn recognize(&self, crop: &ImageTensor) -> Result<String> {
        let dir = std::env::temp_dir();
        let path = dir.join(format!(
            "lowlight-crop-{}-{:x}.png",
            std::process::id(),
            crop.data().iter().fold(0u64, |h, v| h.rotate_left(5) ^ v.to_bits() as u64)
        ));
        save_image(crop, &path)?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&path)
            .output()
            .map_err(|e| Error::Recognizer(format!("{}: {e}", self.program.display())));
        let _ = std::fs::remove_file(&path);
        let out = out?;
        if !out.status.success() {
            return Err(Error::Recognizer(format!(
                "{} exited with {}",
                self.program.display(),
                out.status
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }
}

pub fn words_match(recognized: &str, truth: &str) -> bool {
    recognized.trim().to_lowercase() == truth.trim().to_lowercase()
}

/// Axis-aligned crop of `b`'s bounding rectangle, clipped to the image.
pub fn crop_box(image: &ImageTensor, b: &TextBox) -> Option<ImageTensor> {
    let (x0, y0, x1, y1) = b.bounds();
    let cx0 = x0.floor().clamp(0.0, image.width() as f64) as usize;
    let cy0 = y0.floor().clamp(0.0, image.height() as f64) as usize;
    let cx1 = x1.ceil().clamp(0.0, image.width() as f64) as usize;
    let cy1 = y1.ceil().clamp(0.0, image.height() as f64) as usize;
    if cx1 <= cx0 || cy1 <= cy0 {
        return None;
    }
    image.crop(cx0, cy0, cx1 - cx0, cy1 - cy0).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpottingCounts {
    pub correct: usize,
    pub care_gt: usize,
}

impl SpottingCounts {
    pub fn accuracy(&self) -> f64 {
        if self.care_gt == 0 {
            0.0
        } else {
            self.correct as f64 / self.care_gt as f64
        }
    }
}

impl Add for SpottingCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            correct: self.correct + o.correct,
            care_gt: self.care_gt + o.care_gt,
        }
    }
}

impl AddAssign for SpottingCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn spotting_counts(
    image: &ImageTensor,
    m: &DetectionMatch,
    pred: &[TextBox],
    gt: &[TextBox],
    recognizer: &dyn WordRecognizer,
) -> SpottingCounts {
    let care_gt = gt.iter().filter(|b| b.care).count();
    let mut correct = 0;
    for &(pi, gi, _) in &m.pairs {
        let Some(crop) = crop_box(image, &pred[pi]) else {
            continue;
        };
        match recognizer.recognize(&crop) {
            Ok(word) if words_match(&word, &gt[gi].transcription) => correct += 1,
            Ok(_) => {}
            Err(e) => warn!("recognizer failed on prediction {pi}: {e}"),
        }
    }
    SpottingCounts { correct, care_gt }
}

/// Correctly recognized matched words over all care ground-truth words.
pub fn spotting_accuracy(
    image: &ImageTensor,
    m: &DetectionMatch,
    pred: &[TextBox],
    gt: &[TextBox],
    recognizer: &dyn WordRecognizer,
) -> f64 {
    spotting_counts(image, m, pred, gt, recognizer).accuracy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texteval::match_detections;

    #[test]
    fn case_insensitive() {
        assert!(words_match("Better", "BETTER"));
        assert!(!words_match("bitter", "BETTER"));
        assert!(!words_match("after", "BETTER"));
    }

    #[test]
    fn accuracy_over_care_words() {
        let img = ImageTensor::filled(20, 40, 0.5);
        let gt = vec![
            TextBox::rect(0.0, 0.0, 10.0, 10.0, "BETTER"),
            TextBox::rect(20.0, 0.0, 30.0, 10.0, "LIGHT"),
            TextBox::rect(0.0, 10.0, 10.0, 20.0, "###"),
        ];
        let pred = gt[..2].to_vec();
        let m = match_detections(&pred, &gt, 0.5);
        let exact = |c: &ImageTensor| -> Result<String> {
            Ok(if c.width() == 10 && c.height() == 10 { "Better".into() } else { "x".into() })
        };
        // only the first crop is read correctly; the don't-care box is excluded
        assert_eq!(spotting_accuracy(&img, &m, &pred, &gt, &exact), 0.5);

        let failing = |_: &ImageTensor| -> Result<String> { Err(Error::Recognizer("boom".into())) };
        assert_eq!(spotting_accuracy(&img, &m, &pred, &gt, &failing), 0.0);
    }
}
