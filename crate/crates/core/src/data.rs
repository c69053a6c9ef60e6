//! Paired datasets: the JSON manifest, synthetic darkening of bright images,
//! and geometric augmentation applied identically to both halves of a pair.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{load_image, parse_annotations, ImageTensor, PairedSample, TextBox};
pub use crate::domain::Source;
use crate::error::{Error, Result};

/// Short-exposure simulation in linear light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarkenParams {
    pub exposure_scale: f64,
    pub read_noise_sigma: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for DarkenParams {
    fn default() -> Self {
        Self {
            exposure_scale: 1.0 / 30.0,
            read_noise_sigma: 0.01,
            gamma: 2.2,
            seed: 0,
        }
    }
}

impl DarkenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_scale > 0.0 && self.exposure_scale <= 1.0) {
            return Err(Error::Argument(format!(
                "exposure scale must be in (0, 1], got {}",
                self.exposure_scale
            )));
        }
        if !(self.read_noise_sigma >= 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Argument("noise sigma must be >= 0 and gamma > 0".into()));
        }
        Ok(())
    }
}

/// Per-image parameter sampler: scale uniform in `[scale_min, scale_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarkenSampler {
    pub scale_min: f64,
    pub scale_max: f64,
    pub read_noise_sigma: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for DarkenSampler {
    fn default() -> Self {
        Self {
            scale_min: 1.0 / 100.0,
            scale_max: 1.0 / 30.0,
            read_noise_sigma: 0.01,
            gamma: 2.2,
            seed: 0,
        }
    }
}

impl DarkenSampler {
    /// Parameters for the `index`-th image; independent of call order.
    pub fn params_for(&self, index: u64) -> DarkenParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let exposure_scale = if self.scale_max > self.scale_min {
            rng.random_range(self.scale_min..=self.scale_max)
        } else {
            self.scale_min
        };
        DarkenParams {
            exposure_scale,
            read_noise_sigma: self.read_noise_sigma,
            gamma: self.gamma,
            seed: rng.random(),
        }
    }
}

/// `((x^gamma * scale + noise)^(1/gamma))` quantized to 8 bits.
///
/// Negative linear values after noise are clipped before re-encoding.
pub fn darken(image: &ImageTensor, params: &DarkenParams) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.read_noise_sigma.max(0.0)).expect("finite sigma");
    let inv_gamma = 1.0 / params.gamma;
    let mut out = image.clone();
    for v in out.data_mut() {
        let linear = (*v as f64).clamp(0.0, 1.0).powf(params.gamma) * params.exposure_scale;
        let noisy = if params.read_noise_sigma > 0.0 {
            linear + noise.sample(&mut rng)
        } else {
            linear
        };
        let encoded = noisy.max(0.0).powf(inv_gamma);
        *v = ((encoded * 255.0).round() / 255.0).clamp(0.0, 1.0) as f32;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub low: PathBuf,
    pub gt: PathBuf,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    pub split: String,
    pub source: Source,
    /// Parameters used to synthesize `low`, when it is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub darken: Option<DarkenParams>,
}

/// JSON manifest. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Unique ids and existing files.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate manifest id {:?}", e.id)));
            }
            let files = [Some(&e.low), Some(&e.gt), e.annotations.as_ref()];
            for p in files.into_iter().flatten() {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("referenced by manifest entry {:?}", e.id),
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: &str) -> Vec<SampleSource> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| SampleSource::Lazy {
                entry: e.clone(),
                root: self.root.clone(),
            })
            .collect()
    }
}

/// A sample held in memory or loaded from disk on demand.
#[derive(Debug, Clone)]
pub enum SampleSource {
    InMemory(PairedSample),
    Lazy { entry: ManifestEntry, root: PathBuf },
}

impl SampleSource {
    pub fn id(&self) -> &str {
        match self {
            SampleSource::InMemory(s) => &s.id,
            SampleSource::Lazy { entry, .. } => &entry.id,
        }
    }

    pub fn load(&self) -> Result<PairedSample> {
        match self {
            SampleSource::InMemory(s) => Ok(s.clone()),
            SampleSource::Lazy { entry, root } => {
                let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
                let low = load_image(resolve(&entry.low))?;
                let gt = load_image(resolve(&entry.gt))?;
                let boxes = match &entry.annotations {
                    Some(a) => parse_annotations(resolve(a), gt.width(), gt.height())?,
                    None => Vec::new(),
                };
                let mut s = PairedSample::new(entry.id.clone(), low, gt, boxes).map_err(|e| {
                    Error::Validation(format!("manifest entry {:?}: {e}", entry.id))
                })?;
                s.source = entry.source;
                Ok(s)
            }
        }
    }
}

/// Loads every sample of `split` (real and synthetic entries alike).
pub fn load_dataset(manifest: &DatasetManifest, split: &str) -> Result<Vec<PairedSample>> {
    manifest.validate()?;
    manifest.split(split).iter().map(SampleSource::load).collect()
}

fn shift_and_clip(boxes: &[TextBox], dx: f64, dy: f64, w: f64, h: f64) -> Vec<TextBox> {
    boxes
        .iter()
        .filter_map(|b| {
            let mut t = b.translated(dx, dy);
            t.clip_to(w, h);
            (t.area() > 0.0).then_some(t)
        })
        .collect()
}

/// Same random `size x size` window from both images; boxes are shifted,
/// clipped to the window, and dropped when nothing of them remains. Images
/// smaller than the window are reflect-padded first.
pub fn random_crop_pair(sample: &PairedSample, size: usize, rng: &mut impl Rng) -> PairedSample {
    let (h, w) = (sample.low.height(), sample.low.width());
    let (low, gt) = if h < size || w < size {
        warn!("sample {} ({w}x{h}) is smaller than the {size} crop; reflect-padding", sample.id);
        (sample.low.pad_reflect(size, size), sample.gt.pad_reflect(size, size))
    } else {
        (sample.low.clone(), sample.gt.clone())
    };
    let (h, w) = (low.height(), low.width());
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    let crop = |img: &ImageTensor| img.crop(x0, y0, size, size).expect("window inside image");
    PairedSample {
        id: sample.id.clone(),
        low: crop(&low),
        gt: crop(&gt),
        boxes: shift_and_clip(&sample.boxes, -(x0 as f64), -(y0 as f64), size as f64, size as f64),
        source: sample.source,
    }
}

/// Flips and quarter turns applied in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..=3.
    pub quarter_turns: u8,
}

impl AugmentPlan {
    /// Each transform independently with probability 1/2; a rotation picks
    /// 90, 180 or 270 degrees uniformly.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let quarter_turns = if rng.random_bool(0.5) {
            rng.random_range(1..=3)
        } else {
            0
        };
        Self {
            hflip,
            vflip,
            quarter_turns,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.quarter_turns % 4 == 0
    }

    pub fn apply_image(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let (h, w) = (img.height(), img.width());
        let mut out = img.clone();
        if self.hflip {
            out = ImageTensor::from_fn(h, w, |c, y, x| out.get(c, y, w - 1 - x));
        }
        if self.vflip {
            out = ImageTensor::from_fn(h, w, |c, y, x| out.get(c, h - 1 - y, x));
        }
        let turns = self.quarter_turns % 4;
        if turns != 0 && h != w {
            return Err(Error::Shape(format!("rotation needs a square image, got {w}x{h}")));
        }
        for _ in 0..turns {
            // pixel (x, y) moves to (y, n - 1 - x)
            let n = h;
            out = ImageTensor::from_fn(n, n, |c, y, x| out.get(c, x, n - 1 - y));
        }
        Ok(out)
    }

    pub fn apply_boxes(&self, boxes: &[TextBox], width: usize, height: usize) -> Vec<TextBox> {
        let (w, h) = (width as f64, height as f64);
        boxes
            .iter()
            .map(|b| {
                let mut q = b.quad;
                if self.hflip {
                    q.iter_mut().for_each(|p| p.0 = w - p.0);
                    q.reverse();
                }
                if self.vflip {
                    q.iter_mut().for_each(|p| p.1 = h - p.1);
                    q.reverse();
                }
                for _ in 0..self.quarter_turns % 4 {
                    q.iter_mut().for_each(|p| *p = (p.1, w - p.0));
                }
                TextBox {
                    quad: q,
                    ..b.clone()
                }
            })
            .collect()
    }

    pub fn apply(&self, sample: &PairedSample) -> Result<PairedSample> {
        Ok(PairedSample {
            id: sample.id.clone(),
            low: self.apply_image(&sample.low)?,
            gt: self.apply_image(&sample.gt)?,
            boxes: self.apply_boxes(&sample.boxes, sample.low.width(), sample.low.height()),
            source: sample.source,
        })
    }
}

/// Random flips and quarter-turn rotation, identical for low, gt and boxes.
pub fn augment_pair(sample: &PairedSample, rng: &mut impl Rng) -> Result<PairedSample> {
    AugmentPlan::sample(rng).apply(sample)
}

/// Deterministic toy scene: a smooth background with a few bright signs
/// carrying dark stroke "words", plus one box per word. Dims need not be even.
pub fn synthetic_text_scene(height: usize, width: usize, seed: u64) -> (ImageTensor, Vec<TextBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.6));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.6));
    let mut img = ImageTensor::from_fn(height, width, |c, y, x| {
        let t = (x as f32 / width.max(2) as f32 + y as f32 / height.max(2) as f32) / 2.0;
        c0[c] * (1.0 - t) + c1[c] * t
    });
    let glyph = (height / 10).clamp(3, 12);
    let mut boxes = Vec::new();
    let mut occupied: Vec<(usize, usize, usize, usize)> = Vec::new();
    let words = rng.random_range(2..=3);
    for _ in 0..words * 8 {
        if boxes.len() == words {
            break;
        }
        let letters = rng.random_range(2..=4);
        let ww = letters * (glyph + glyph / 2) + glyph / 2;
        let wh = glyph + glyph;
        if ww + 2 > width || wh + 2 > height {
            break;
        }
        let x0 = rng.random_range(1..width - ww);
        let y0 = rng.random_range(1..height - wh);
        let clash = occupied
            .iter()
            .any(|&(a, b, c, d)| x0 < c + 2 && a < x0 + ww + 2 && y0 < d + 2 && b < y0 + wh + 2);
        if clash {
            continue;
        }
        occupied.push((x0, y0, x0 + ww, y0 + wh));
        let plate: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.75..0.95));
        let ink: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.02..0.15));
        for y in y0..y0 + wh {
            for x in x0..x0 + ww {
                for c in 0..3 {
                    img.set(c, y, x, plate[c]);
                }
            }
        }
        let mut word = String::new();
        let (gy0, gy1) = (y0 + glyph / 2, y0 + glyph / 2 + glyph);
        for k in 0..letters {
            let gx0 = x0 + glyph / 2 + k * (glyph + glyph / 2);
            let code: u8 = rng.random_range(0..16);
            word.push((b'A' + code) as char);
            let stroke = (glyph / 4).max(1);
            for y in gy0..gy1 {
                for x in gx0..gx0 + glyph {
                    let (dx, dy) = (x - gx0, y - gy0);
                    let left = dx < stroke;
                    let right = dx + stroke >= glyph && code & 1 != 0;
                    let top = dy < stroke && code & 2 != 0;
                    let mid = dy.abs_diff(glyph / 2) < stroke.div_ceil(2) && code & 4 != 0;
                    let bottom = dy + stroke >= glyph && code & 8 != 0;
                    if left || right || top || mid || bottom {
                        for c in 0..3 {
                            img.set(c, y, x, ink[c]);
                        }
                    }
                }
            }
        }
        boxes.push(TextBox::rect(x0 as f64, y0 as f64, (x0 + ww) as f64, (y0 + wh) as f64, word));
    }
    (img, boxes)
}
