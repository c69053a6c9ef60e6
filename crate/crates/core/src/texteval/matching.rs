//! One-to-one detection matching and precision / recall / H-Mean.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::domain::TextBox;
use crate::texteval::geometry::{intersection_area, iou};

/// Fraction of a prediction's area that must fall inside a don't-care region
/// for the prediction to be ignored.
pub const DONT_CARE_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionMatch {
    /// `(prediction index, ground-truth index, IoU)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_pred: Vec<usize>,
    /// Care ground truths left without a prediction.
    pub unmatched_gt: Vec<usize>,
    /// Predictions absorbed by don't-care regions; they count nowhere.
    pub ignored_pred: Vec<usize>,
    pub dont_care_gt: Vec<usize>,
}

impl DetectionMatch {
    pub fn counts(&self) -> DetectionCounts {
        DetectionCounts {
            matched: self.pairs.len(),
            care_gt: self.pairs.len() + self.unmatched_gt.len(),
            counted_pred: self.pairs.len() + self.unmatched_pred.len(),
        }
    }
}

/// Greedy matching in descending IoU order over pairs with `IoU >= threshold`.
///
/// Predictions that fall mostly inside a don't-care ground truth are set aside
/// first and take no part in the matching.
pub fn match_detections(pred: &[TextBox], gt: &[TextBox], threshold: f64) -> DetectionMatch {
    let dont_care_gt: Vec<usize> = (0..gt.len()).filter(|&j| !gt[j].care).collect();
    let mut ignored_pred = Vec::new();
    let mut live_pred = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        let area = p.area();
        let absorbed = area > 0.0
            && dont_care_gt
                .iter()
                .any(|&j| intersection_area(&p.quad, &gt[j].quad) / area > DONT_CARE_COVERAGE);
        if absorbed {
            ignored_pred.push(i);
        } else {
            live_pred.push(i);
        }
    }
    let care_gt: Vec<usize> = (0..gt.len()).filter(|&j| gt[j].care).collect();

    let mut candidates = Vec::new();
    for &i in &live_pred {
        for &j in &care_gt {
            let v = iou(&pred[i], &gt[j]);
            if v >= threshold && v > 0.0 {
                candidates.push((i, j, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (i, j, v) in candidates {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j, v));
        }
    }
    DetectionMatch {
        pairs,
        unmatched_pred: live_pred.into_iter().filter(|&i| !pred_used[i]).collect(),
        unmatched_gt: care_gt.into_iter().filter(|&j| !gt_used[j]).collect(),
        ignored_pred,
        dont_care_gt,
    }
}

/// Counts that aggregate across images before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub matched: usize,
    pub care_gt: usize,
    pub counted_pred: usize,
}

impl Add for DetectionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            matched: self.matched + o.matched,
            care_gt: self.care_gt + o.care_gt,
            counted_pred: self.counted_pred + o.counted_pred,
        }
    }
}

impl AddAssign for DetectionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl DetectionCounts {
    pub fn scores(&self) -> DetectionScores {
        scores_from_counts(self.matched, self.care_gt, self.counted_pred)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub precision: f64,
    pub recall: f64,
    pub hmean: f64,
}

fn scores_from_counts(matched: usize, care_gt: usize, counted_pred: usize) -> DetectionScores {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(matched, counted_pred);
    let recall = ratio(matched, care_gt);
    let hmean = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionScores {
        precision,
        recall,
        hmean,
    }
}

/// Precision over counted predictions, recall over care ground truths, and
/// their harmonic mean. Empty denominators score 0.
pub fn h_mean(m: &DetectionMatch, care_gt_count: usize, counted_pred_count: usize) -> DetectionScores {
    scores_from_counts(m.pairs.len(), care_gt_count, counted_pred_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn r(x0: f64, y0: f64, x1: f64, y1: f64) -> TextBox {
        TextBox::rect(x0, y0, x1, y1, "w")
    }

    #[test]
    fn identical_lists_match_fully() {
        let gt = vec![r(0.0, 0.0, 10.0, 10.0), r(20.0, 0.0, 30.0, 10.0)];
        let m = match_detections(&gt, &gt, 0.5);
        assert_eq!(m.pairs.len(), 2);
        let c = m.counts();
        let s = h_mean(&m, c.care_gt, c.counted_pred);
        assert_eq!((s.precision, s.recall, s.hmean), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions() {
        let gt = vec![r(0.0, 0.0, 10.0, 10.0)];
        let m = match_detections(&[], &gt, 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_gt, vec![0]);
        let s = h_mean(&m, 1, 0);
        assert_eq!((s.precision, s.recall, s.hmean), (0.0, 0.0, 0.0));
    }

    #[test]
    fn greedy_takes_the_higher_iou() {
        let gt = vec![r(0.0, 0.0, 10.0, 10.0)];
        // IoU 0.8: width 8 inside; IoU 0.6: width 6 inside
        let preds = vec![r(0.0, 0.0, 6.0, 10.0), r(0.0, 0.0, 8.0, 10.0)];
        let m = match_detections(&preds, &gt, 0.5);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].0, 1);
        assert!((m.pairs[0].2 - 0.8).abs() < 1e-12);
        assert_eq!(m.unmatched_pred, vec![0]);
    }

    #[test]
    fn dont_care_absorbs_predictions() {
        let gt = vec![r(0.0, 0.0, 10.0, 10.0), TextBox::rect(50.0, 0.0, 70.0, 10.0, "###")];
        let preds = vec![r(0.0, 0.0, 10.0, 10.0), r(52.0, 0.0, 68.0, 10.0)];
        let m = match_detections(&preds, &gt, 0.5);
        assert_eq!(m.ignored_pred, vec![1]);
        assert_eq!(m.counts(), DetectionCounts { matched: 1, care_gt: 1, counted_pred: 1 });
    }

    #[test]
    fn four_predictions_six_gt() {
        let s = DetectionCounts { matched: 3, care_gt: 6, counted_pred: 4 }.scores();
        assert_eq!((s.precision, s.recall), (0.75, 0.5));
        assert!((s.hmean - 0.6).abs() < 1e-15);
    }

    #[test]
    fn hmean_matches_direct_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let care = rng.random_range(1..50usize);
            let preds = rng.random_range(1..50usize);
            let matched = rng.random_range(0..=care.min(preds));
            let s = DetectionCounts { matched, care_gt: care, counted_pred: preds }.scores();
            let (p, r) = (matched as f64 / preds as f64, matched as f64 / care as f64);
            let h = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            assert_eq!(s.hmean, h);
            assert!(s.hmean <= p.min(r) * 2.0 / (p + r).max(f64::MIN_POSITIVE) + 1e-12);
        }
    }

    fn arb_boxes() -> impl Strategy<Value = Vec<TextBox>> {
        proptest::collection::vec(
            (0.0f64..60.0, 0.0f64..60.0, 2.0f64..20.0, 2.0f64..20.0)
                .prop_map(|(x, y, w, h)| TextBox::rect(x, y, x + w, y + h, "w")),
            0..6,
        )
    }

    proptest! {
        #[test]
        fn matching_is_one_to_one_and_above_threshold(pred in arb_boxes(), gt in arb_boxes(), t in 0.1f64..0.9) {
            let m = match_detections(&pred, &gt, t);
            let mut ps: Vec<_> = m.pairs.iter().map(|p| p.0).collect();
            let mut gs: Vec<_> = m.pairs.iter().map(|p| p.1).collect();
            ps.sort(); ps.dedup(); gs.sort(); gs.dedup();
            prop_assert_eq!(ps.len(), m.pairs.len());
            prop_assert_eq!(gs.len(), m.pairs.len());
            prop_assert!(m.pairs.iter().all(|p| p.2 >= t));
        }

        #[test]
        fn reversing_inputs_relabels_only(pred in arb_boxes(), gt in arb_boxes()) {
            let a = match_detections(&pred, &gt, 0.5);
            let rp: Vec<_> = pred.iter().rev().cloned().collect();
            let rg: Vec<_> = gt.iter().rev().cloned().collect();
            let b = match_detections(&rp, &rg, 0.5);
            prop_assert_eq!(a.pairs.len(), b.pairs.len());
            let mut ious_a: Vec<f64> = a.pairs.iter().map(|p| p.2).collect();
            let mut ious_b: Vec<f64> = b.pairs.iter().map(|p| p.2).collect();
            ious_a.sort_by(f64::total_cmp);
            ious_b.sort_by(f64::total_cmp);
            for (x, y) in ious_a.iter().zip(&ious_b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
