//! Gaussian region-score targets and heatmap-to-box post-processing.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::domain::{GrayMap, TextBox};

/// Standard deviation of the target Gaussian in unit-square coordinates.
const TARGET_SIGMA: f64 = 0.25;

/// Homography taking the unit square's corners `(0,0),(1,0),(1,1),(0,1)` to `quad`.
fn square_to_quad(quad: &[(f64, f64); 4]) -> Option<Matrix3<f64>> {
    let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, (&(u, v), &(x, y))) in src.iter().zip(quad.iter()).enumerate() {
        let r = 2 * i;
        a[(r, 0)] = u;
        a[(r, 1)] = v;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -v * x;
        b[r] = x;
        a[(r + 1, 3)] = u;
        a[(r + 1, 4)] = v;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -u * y;
        a[(r + 1, 7)] = -v * y;
        b[r + 1] = y;
    }
    let h = a.lu().solve(&b)?;
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

/// Renders one box's warped Gaussian into `map` by per-pixel max.
fn splat(map: &mut GrayMap, b: &TextBox) {
    if b.area() <= 0.0 {
        return;
    }
    let Some(inv) = square_to_quad(&b.quad).and_then(|h| h.try_inverse()) else {
        return;
    };
    let (x0, y0, x1, y1) = b.bounds();
    // half-resolution pixel (i, j) samples full-resolution point (2j + 1, 2i + 1)
    let lo = |v: f64| ((v - 1.0) / 2.0).floor().max(0.0) as usize;
    let hi = |v: f64, n: usize| (((v - 1.0) / 2.0).ceil().max(0.0) as usize).min(n.saturating_sub(1));
    for i in lo(y0)..=hi(y1, map.height()) {
        for j in lo(x0)..=hi(x1, map.width()) {
            if i >= map.height() || j >= map.width() {
                continue;
            }
            let (px, py) = (2.0 * j as f64 + 1.0, 2.0 * i as f64 + 1.0);
            let p = inv * nalgebra::Vector3::new(px, py, 1.0);
            if p.z.abs() < 1e-12 {
                continue;
            }
            let (u, v) = (p.x / p.z, p.y / p.z);
            if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
                continue;
            }
            let d2 = (u - 0.5).powi(2) + (v - 0.5).powi(2);
            let val = (-d2 / (2.0 * TARGET_SIGMA * TARGET_SIGMA)).exp() as f32;
            if val > map.get(i, j) {
                map.set(i, j, val);
            }
        }
    }
}

/// Half-resolution region-score target: a Gaussian warped into every care box,
/// peak 1 at the box center, overlapping boxes composited by maximum.
pub fn synth_region_target(boxes: &[TextBox], width: usize, height: usize) -> GrayMap {
    let mut map = GrayMap::filled(height / 2, width / 2, 0.0);
    for b in boxes.iter().filter(|b| b.care) {
        splat(&mut map, b);
    }
    map
}

/// Thresholds for turning heatmaps into boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// A component is kept only if its peak region score reaches this.
    pub text_threshold: f32,
    /// Affinity score above which pixels join neighbouring characters.
    pub link_threshold: f32,
    /// Region score above which a pixel belongs to some component.
    pub low_text: f32,
    /// Minimum component size in half-resolution pixels.
    pub min_size: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            text_threshold: 0.7,
            link_threshold: 0.4,
            low_text: 0.4,
            min_size: 10,
        }
    }
}

/// Connected components over `region > low_text || affinity > link_threshold`,
/// kept when their peak region score reaches `text_threshold`, returned as
/// axis-aligned boxes in full-resolution coordinates.
pub fn detect_boxes(region: &GrayMap, affinity: Option<&GrayMap>, config: &DetectConfig) -> Vec<TextBox> {
    let (h, w) = (region.height(), region.width());
    let on = |y: usize, x: usize| {
        region.get(y, x) > config.low_text
            || affinity.is_some_and(|a| a.get(y, x) > config.link_threshold)
    };
    let mut label = vec![false; h * w];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for sy in 0..h {
        for sx in 0..w {
            if label[sy * w + sx] || !on(sy, sx) {
                continue;
            }
            label[sy * w + sx] = true;
            queue.push_back((sy, sx));
            let (mut n, mut peak) = (0usize, f32::NEG_INFINITY);
            let (mut x0, mut y0, mut x1, mut y1) = (sx, sy, sx, sy);
            while let Some((y, x)) = queue.pop_front() {
                n += 1;
                peak = peak.max(region.get(y, x));
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
                let neighbours = [
                    (y.wrapping_sub(1), x),
                    (y + 1, x),
                    (y, x.wrapping_sub(1)),
                    (y, x + 1),
                ];
                for (ny, nx) in neighbours {
                    if ny < h && nx < w && !label[ny * w + nx] && on(ny, nx) {
                        label[ny * w + nx] = true;
                        queue.push_back((ny, nx));
                    }
                }
            }
            if n < config.min_size || peak < config.text_threshold {
                continue;
            }
            // grow by a margin proportional to the component's thickness
            let (bw, bh) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
            let grow = ((n as f64 * bw.min(bh) / (bw * bh)).sqrt() * 2.0).round();
            let fx0 = (x0 as f64 - grow).max(0.0) * 2.0;
            let fy0 = (y0 as f64 - grow).max(0.0) * 2.0;
            let fx1 = ((x1 + 1) as f64 + grow).min(w as f64) * 2.0;
            let fy1 = ((y1 + 1) as f64 + grow).min(h as f64) * 2.0;
            boxes.push(TextBox::rect(fx0, fy0, fx1, fy1, ""));
        }
    }
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(m: &GrayMap) -> Vec<(usize, usize)> {
        let best = m.max_value();
        let mut out = vec![];
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(y, x) == best {
                    out.push((y, x));
                }
            }
        }
        out
    }

    #[test]
    fn empty_is_zero() {
        let m = synth_region_target(&[], 32, 16);
        assert_eq!((m.height(), m.width()), (8, 16));
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_box_peaks_at_center() {
        // center (11, 11) is sampled by half-res pixel (5, 5)
        let b = TextBox::rect(2.0, 2.0, 20.0, 20.0, "A");
        let m = synth_region_target(&[b], 40, 40);
        assert_eq!(argmax(&m), vec![(5, 5)]);
        assert!((m.get(5, 5) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_boxes_compose_by_max() {
        let a = TextBox::rect(2.0, 2.0, 20.0, 14.0, "A");
        let b = TextBox::new([(30.0, 20.0), (50.0, 24.0), (48.0, 36.0), (28.0, 32.0)], "B");
        let ma = synth_region_target(std::slice::from_ref(&a), 64, 48);
        let mb = synth_region_target(std::slice::from_ref(&b), 64, 48);
        let both = synth_region_target(&[a, b], 64, 48);
        for y in 0..both.height() {
            for x in 0..both.width() {
                assert_eq!(both.get(y, x), ma.get(y, x).max(mb.get(y, x)));
            }
        }
    }

    #[test]
    fn dont_care_boxes_are_not_rendered() {
        let b = TextBox::rect(2.0, 2.0, 20.0, 20.0, "###");
        assert!(synth_region_target(&[b], 32, 32).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adding_a_box_never_lowers_a_pixel() {
        let mut boxes = vec![TextBox::rect(4.0, 4.0, 30.0, 12.0, "A")];
        let before = synth_region_target(&boxes, 64, 64);
        boxes.push(TextBox::rect(10.0, 8.0, 40.0, 30.0, "B"));
        let after = synth_region_target(&boxes, 64, 64);
        assert!(before.data().iter().zip(after.data()).all(|(a, b)| b >= a));
    }

    #[test]
    fn detects_rendered_boxes() {
        let gt = [
            TextBox::rect(8.0, 8.0, 40.0, 24.0, "A"),
            TextBox::rect(60.0, 40.0, 100.0, 56.0, "B"),
        ];
        let m = synth_region_target(&gt, 128, 64);
        let found = detect_boxes(&m, None, &DetectConfig::default());
        assert_eq!(found.len(), 2);
        for g in &gt {
            let best = found
                .iter()
                .map(|f| crate::texteval::iou(f, g))
                .fold(0.0, f64::max);
            assert!(best > 0.3, "{best}");
        }
    }

    #[test]
    fn weak_blobs_are_discarded() {
        let mut m = GrayMap::filled(16, 16, 0.0);
        for y in 4..8 {
            for x in 4..8 {
                m.set(y, x, 0.5);
            }
        }
        assert!(detect_boxes(&m, None, &DetectConfig::default()).is_empty());
    }
}
