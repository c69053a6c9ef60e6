//! Images, single-channel maps, text annotations and their on-disk formats.
//!
//! Images live in memory as planar (channel-major) `f32` in `[0, 1]`. On disk
//! they are 8- or 16-bit RGB PNG/JPEG. Annotations use the ICDAR 2015 line
//! format `x1,y1,x2,y2,x3,y3,x4,y4,transcription`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, ImageBuffer, Rgb};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transcription used by ICDAR-style ground truth for unreadable text.
pub const DONT_CARE: &str = "###";

/// An `H x W x 3` RGB image stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "expected {} values for a {height}x{width} RGB image, got {}",
                Self::CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; Self::CHANNELS * height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// Builds an image from `f(channel, y, x)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(Self::CHANNELS * height * width);
        for c in 0..Self::CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// BT.601 luma.
    pub fn luma(&self) -> GrayMap {
        GrayMap::from_fn(self.height, self.width, |y, x| {
            let [r, g, b] = self.pixel(y, x);
            0.299 * r + 0.587 * g + 0.114 * b
        })
    }

    /// Copies the window `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop window {w}x{h}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(h, w, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }

    /// Reflect-pads on the bottom and right edges up to `height x width`.
    pub fn pad_reflect(&self, height: usize, width: usize) -> Self {
        Self::from_fn(height.max(self.height), width.max(self.width), |c, y, x| {
            self.get(c, reflect(y, self.height), reflect(x, self.width))
        })
    }

    /// `(1, 3, H, W)` tensor of the requested dtype.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(
            Tensor::from_slice(&self.data, (1, Self::CHANNELS, self.height, self.width), device)?
                .to_dtype(dtype)?,
        )
    }

    /// Accepts `(3, H, W)` or `(1, 3, H, W)`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => {
                return Err(Error::Shape(format!(
                    "expected a single RGB image tensor, got {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        if c != Self::CHANNELS {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::new(h, w, data)
    }
}

/// Mirror index without repeating the edge sample (`abc|ba`).
pub(crate) fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Single-channel `H x W` map (attention, edges, region scores).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} values for a {height}x{width} map, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// `(1, 1, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, (1, 1, self.height, self.width), device)?
            .to_dtype(dtype)?)
    }

    /// Accepts `(H, W)`, `(1, H, W)` or `(1, 1, H, W)`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims();
        let (h, w) = match dims {
            [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
            _ => {
                return Err(Error::Shape(format!(
                    "expected a single-channel map tensor, got {dims:?}"
                )))
            }
        };
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::new(h, w, data)
    }

    /// Gray replicated to three channels, for visual dumps.
    pub fn to_rgb(&self) -> ImageTensor {
        ImageTensor::from_fn(self.height, self.width, |_, y, x| self.get(y, x))
    }
}

/// Quadrilateral text annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBox {
    /// Vertices in pixel coordinates, clockwise in image space (y down).
    pub quad: [(f64, f64); 4],
    pub transcription: String,
    /// False for don't-care regions.
    pub care: bool,
}

impl TextBox {
    pub fn new(quad: [(f64, f64); 4], transcription: impl Into<String>) -> Self {
        let transcription = transcription.into();
        let care = transcription != DONT_CARE;
        Self {
            quad,
            transcription,
            care,
        }
    }

    /// Axis-aligned rectangle `(x0, y0)-(x1, y1)` listed clockwise from top-left.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, transcription: impl Into<String>) -> Self {
        Self::new([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], transcription)
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.quad.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }

    pub fn center(&self) -> (f64, f64) {
        let (sx, sy) = self
            .quad
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
        (sx / 4.0, sy / 4.0)
    }

    /// Unsigned polygon area (shoelace).
    pub fn area(&self) -> f64 {
        crate::texteval::polygon_area(&self.quad).abs()
    }

    /// Clamps every vertex into `[0, width] x [0, height]`; returns whether anything moved.
    pub fn clip_to(&mut self, width: f64, height: f64) -> bool {
        let mut moved = false;
        for (x, y) in &mut self.quad {
            let (cx, cy) = (x.clamp(0.0, width), y.clamp(0.0, height));
            moved |= cx != *x || cy != *y;
            *x = cx;
            *y = cy;
        }
        moved
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for (x, y) in &mut out.quad {
            *x += dx;
            *y += dy;
        }
        out
    }
}

/// A low/ground-truth pair with optional text annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub low: ImageTensor,
    pub gt: ImageTensor,
    pub boxes: Vec<TextBox>,
    pub source: Source,
}

/// Whether the low image was captured or synthesized from the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Real,
    Synthetic,
}

impl PairedSample {
    pub fn new(
        id: impl Into<String>,
        low: ImageTensor,
        gt: ImageTensor,
        boxes: Vec<TextBox>,
    ) -> Result<Self> {
        if !low.same_shape(&gt) {
            return Err(Error::Shape(format!(
                "low image is {}x{} but ground truth is {}x{}",
                low.width(),
                low.height(),
                gt.width(),
                gt.height()
            )));
        }
        Ok(Self {
            id: id.into(),
            low,
            gt,
            boxes,
            source: Source::Real,
        })
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f32> = match decoded {
        DynamicImage::ImageRgb8(buf) => planar(buf.as_raw(), width, height, 255.0),
        DynamicImage::ImageRgb16(buf) => planar(buf.as_raw(), width, height, 65535.0),
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected 3-channel RGB, found {:?}", other.color()),
            })
        }
    };
    ImageTensor::new(height, width, data)
}

fn planar<S: Copy + Into<f32>>(interleaved: &[S], width: usize, height: usize, max: f32) -> Vec<f32> {
    let mut data = vec![0.0f32; 3 * width * height];
    for (i, px) in interleaved.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * height * width + i] = px[c].into() / max;
        }
    }
    data
}

/// Clamps to `[0, 1]`, quantizes to 8 bits and writes a PNG.
pub fn save_image(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(image.width() as u32, image.height() as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            px.0[c] = quantize_u8(image.get(c, y as usize, x as usize));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    buf.write_to(&mut w, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn parse_annotations(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
) -> Result<Vec<TextBox>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation_str(&text, width, height).map_err(|(line, reason)| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

/// Parses annotation text; errors carry the 1-based line number.
pub fn parse_annotation_str(
    text: &str,
    width: usize,
    height: usize,
) -> std::result::Result<Vec<TextBox>, (usize, String)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(9, ',');
        let mut coords = [0.0f64; 8];
        for (k, slot) in coords.iter_mut().enumerate() {
            let field = fields
                .next()
                .ok_or_else(|| (line_no, format!("expected 8 coordinates, found {k}")))?;
            *slot = field
                .trim()
                .parse::<f64>()
                .map_err(|_| (line_no, format!("coordinate {} is not a number: {field:?}", k + 1)))?;
            if !slot.is_finite() {
                return Err((line_no, format!("coordinate {} is not finite", k + 1)));
            }
        }
        let transcription = fields
            .next()
            .ok_or_else(|| (line_no, "missing transcription".to_string()))?;
        let quad = [
            (coords[0], coords[1]),
            (coords[2], coords[3]),
            (coords[4], coords[5]),
            (coords[6], coords[7]),
        ];
        let mut tb = TextBox::new(quad, transcription);
        if tb.clip_to(width as f64, height as f64) {
            warn!("annotation line {line_no}: coordinates clipped to {width}x{height}");
        }
        boxes.push(tb);
    }
    Ok(boxes)
}

/// Inverse of [`parse_annotation_str`]; also the detection submission format.
pub fn serialize_annotations(boxes: &[TextBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        for (x, y) in b.quad {
            out.push_str(&format!("{x},{y},"));
        }
        out.push_str(&b.transcription);
        out.push('\n');
    }
    out
}

pub fn write_annotations(boxes: &[TextBox], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serialize_annotations(boxes)).map_err(|e| Error::io(path, e))
}
