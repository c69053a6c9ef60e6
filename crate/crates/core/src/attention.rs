//! Self-regularized attention: `S = 1 - Y` from the input luma, rescaled to
//! the encoder resolutions by 2x2 max pooling.

use candle_core::{DType, Device, Tensor};

use crate::domain::{GrayMap, ImageTensor};
use crate::error::{Error, Result};

/// Default number of pooled levels; matches the enhancer's four downsamplings.
pub const PYRAMID_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub base: GrayMap,
    /// `pyramid[k - 1]` is level `k`, at `H / 2^k x W / 2^k`.
    pub pyramid: Vec<GrayMap>,
}

impl AttentionMap {
    /// Constant map with its pyramid already built; `1.0` disables gating.
    pub fn uniform(height: usize, width: usize, value: f32, levels: usize) -> Result<Self> {
        Self {
            base: GrayMap::filled(height, width, value),
            pyramid: Vec::new(),
        }
        .build_pyramid(levels)
    }

    pub fn levels(&self) -> usize {
        self.pyramid.len()
    }

    /// Level `k` (0 is the base).
    pub fn level(&self, k: usize) -> Option<&GrayMap> {
        if k == 0 {
            Some(&self.base)
        } else {
            self.pyramid.get(k - 1)
        }
    }

    pub fn build_pyramid(mut self, levels: usize) -> Result<Self> {
        let (h, w) = (self.base.height(), self.base.width());
        let factor = 1usize << levels;
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "attention map {w}x{h} is not divisible by 2^{levels}"
            )));
        }
        self.pyramid.clear();
        let mut prev = self.base.clone();
        for _ in 0..levels {
            let next = GrayMap::from_fn(prev.height() / 2, prev.width() / 2, |y, x| {
                let (y0, x0) = (2 * y, 2 * x);
                prev.get(y0, x0)
                    .max(prev.get(y0, x0 + 1))
                    .max(prev.get(y0 + 1, x0))
                    .max(prev.get(y0 + 1, x0 + 1))
            });
            self.pyramid.push(next.clone());
            prev = next;
        }
        Ok(self)
    }

    /// Base plus every level as `(1, 1, h, w)` tensors.
    pub fn to_tensors(&self, dtype: DType, device: &Device) -> Result<Vec<Tensor>> {
        std::iter::once(&self.base)
            .chain(self.pyramid.iter())
            .map(|m| m.to_tensor(dtype, device))
            .collect()
    }
}

/// `S = 1 - Y` with BT.601 luma; no pyramid yet.
pub fn compute_attention(image: &ImageTensor) -> AttentionMap {
    let luma = image.luma();
    let base = GrayMap::from_fn(luma.height(), luma.width(), |y, x| 1.0 - luma.get(y, x));
    AttentionMap {
        base,
        pyramid: Vec::new(),
    }
}

/// Convenience: attention plus a pyramid of `levels` levels.
pub fn attention_pyramid(image: &ImageTensor, levels: usize) -> Result<AttentionMap> {
    compute_attention(image).build_pyramid(levels)
}
