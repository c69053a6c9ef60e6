//! The enhancement generator: a U-Net over `[low image ‖ edge map]` whose
//! encoder skips are multiplied by the attention pyramid before being
//! concatenated into the decoder.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::domain::{GrayMap, ImageTensor};
use crate::error::{Error, Result};
use crate::nn::{self, Initializer, ParamStore};

/// Channel layout of a symmetric U-Net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetSchedule {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Encoder block widths, shallow to deep; the decoder mirrors them.
    pub encoder: Vec<usize>,
    pub bottleneck: usize,
    pub leaky_slope: f64,
}

impl UNetSchedule {
    /// Downsampling steps; inputs must be divisible by `2^depth`.
    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    /// Encoder blocks + bottleneck + decoder blocks.
    pub fn block_count(&self) -> usize {
        2 * self.encoder.len() + 1
    }

    /// Scalar parameter count implied by the layout.
    pub fn parameter_count(&self) -> usize {
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let mut total = 0;
        let mut prev = self.in_channels;
        for &w in &self.encoder {
            total += conv(prev, w, 3) + conv(w, w, 3);
            prev = w;
        }
        total += conv(prev, self.bottleneck, 3) + conv(self.bottleneck, self.bottleneck, 3);
        prev = self.bottleneck;
        for &w in self.encoder.iter().rev() {
            total += (prev * w * 4 + w) + conv(2 * w, w, 3) + conv(w, w, 3);
            prev = w;
        }
        total + conv(prev, self.out_channels, 1)
    }

    /// Every width divided by `factor` (at least 1).
    pub fn scaled_down(&self, factor: usize) -> Self {
        Self {
            encoder: self.encoder.iter().map(|w| (w / factor).max(1)).collect(),
            bottleneck: (self.bottleneck / factor).max(1),
            ..self.clone()
        }
    }
}

/// How encoder features reach the decoder.
#[derive(Debug, Clone, Copy)]
pub enum Skips<'a> {
    /// Ungated concatenation.
    Plain,
    /// Skip `k` multiplied by `gates[k]` (`(N, 1, h, w)`, broadcast over channels).
    Gated(&'a [Tensor]),
    /// Skips replaced by zeros.
    Zeroed,
}

/// Parameters plus layout of one U-Net.
#[derive(Debug, Clone)]
pub struct UNet {
    pub schedule: UNetSchedule,
    pub params: ParamStore,
}

impl UNet {
    pub fn new(schedule: UNetSchedule, seed: u64, dtype: DType) -> Result<Self> {
        if schedule.encoder.is_empty() {
            return Err(Error::Argument("U-Net needs at least one encoder block".into()));
        }
        let slope = schedule.leaky_slope;
        let mut params = ParamStore::new(dtype);
        let mut init = Initializer::new(seed);
        let mut prev = schedule.in_channels;
        for (i, &w) in schedule.encoder.iter().enumerate() {
            init.conv(&mut params, &format!("enc{i}.conv1"), prev, w, 3, slope)?;
            init.conv(&mut params, &format!("enc{i}.conv2"), w, w, 3, slope)?;
            prev = w;
        }
        init.conv(&mut params, "mid.conv1", prev, schedule.bottleneck, 3, slope)?;
        init.conv(&mut params, "mid.conv2", schedule.bottleneck, schedule.bottleneck, 3, slope)?;
        prev = schedule.bottleneck;
        for (i, &w) in schedule.encoder.iter().enumerate().rev() {
            init.conv_transpose(&mut params, &format!("dec{i}.up"), prev, w, 2, slope)?;
            init.conv(&mut params, &format!("dec{i}.conv1"), 2 * w, w, 3, slope)?;
            init.conv(&mut params, &format!("dec{i}.conv2"), w, w, 3, slope)?;
            prev = w;
        }
        init.conv(&mut params, "head", prev, schedule.out_channels, 1, 1.0)?;
        Ok(Self { schedule, params })
    }

    fn block(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let s = self.schedule.leaky_slope;
        let x = nn::leaky_relu(&nn::conv2d(x, &self.params, &format!("{name}.conv1"))?, s)?;
        nn::leaky_relu(&nn::conv2d(&x, &self.params, &format!("{name}.conv2"))?, s)
    }

    /// Raw (unclamped) forward pass on `(N, in_channels, H, W)`.
    pub fn forward(&self, x: &Tensor, skips: Skips<'_>) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let depth = self.schedule.depth();
        if c != self.schedule.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.schedule.in_channels
            )));
        }
        if h % (1 << depth) != 0 || w % (1 << depth) != 0 {
            return Err(Error::Shape(format!(
                "input {w}x{h} is not divisible by 2^{depth}"
            )));
        }
        if let Skips::Gated(gates) = skips {
            if gates.len() < depth {
                return Err(Error::Shape(format!(
                    "need {depth} attention levels, got {}",
                    gates.len()
                )));
            }
        }

        let mut feats = Vec::with_capacity(depth);
        let mut h_t = x.clone();
        for i in 0..depth {
            let f = self.block(&h_t, &format!("enc{i}"))?;
            h_t = nn::max_pool2(&f)?;
            feats.push(f);
        }
        h_t = self.block(&h_t, "mid")?;
        for i in (0..depth).rev() {
            let up = nn::upconv2x2(&h_t, &self.params, &format!("dec{i}.up"))?;
            let skip = match skips {
                Skips::Plain => feats[i].clone(),
                Skips::Gated(gates) => {
                    let g = &gates[i];
                    if g.dim(2)? != feats[i].dim(2)? || g.dim(3)? != feats[i].dim(3)? {
                        return Err(Error::Shape(format!(
                            "attention level {i} is {:?}, skip is {:?}",
                            g.dims(),
                            feats[i].dims()
                        )));
                    }
                    feats[i].broadcast_mul(&g.to_dtype(feats[i].dtype())?)?
                }
                Skips::Zeroed => feats[i].zeros_like()?,
            };
            h_t = self.block(&Tensor::cat(&[&up, &skip], 1)?, &format!("dec{i}"))?;
        }
        nn::conv2d(&h_t, &self.params, "head")
    }
}

/// Default enhancer layout: 32-64-128-256 encoder, 512 bottleneck.
pub fn default_schedule() -> UNetSchedule {
    UNetSchedule {
        in_channels: 4,
        out_channels: 3,
        encoder: vec![32, 64, 128, 256],
        bottleneck: 512,
        leaky_slope: 0.2,
    }
}

/// The enhancement generator's parameters.
#[derive(Debug, Clone)]
pub struct EnhancerParams {
    pub net: UNet,
}

impl EnhancerParams {
    pub const DEPTH: usize = 4;

    pub fn new(schedule: UNetSchedule, seed: u64, dtype: DType) -> Result<Self> {
        if schedule.depth() != Self::DEPTH || schedule.in_channels != 4 || schedule.out_channels != 3 {
            return Err(Error::Argument(format!(
                "enhancer needs 4 encoder blocks, 4 input and 3 output channels; got {:?}",
                schedule
            )));
        }
        Ok(Self {
            net: UNet::new(schedule, seed, dtype)?,
        })
    }

    pub fn schedule(&self) -> &UNetSchedule {
        &self.net.schedule
    }

    pub fn params(&self) -> &ParamStore {
        &self.net.params
    }

    pub fn dtype(&self) -> DType {
        self.net.params.dtype()
    }

    /// Training-time forward pass. `low` is `(N, 3, H, W)`, `edges` `(N, 1, H, W)`,
    /// `gates` the attention base and pyramid levels 1..3. Output is unclamped.
    pub fn forward(&self, low: &Tensor, edges: &Tensor, skips: Skips<'_>) -> Result<Tensor> {
        let (n, _, h, w) = low.dims4()?;
        let (en, ec, eh, ew) = edges.dims4()?;
        if (en, ec, eh, ew) != (n, 1, h, w) {
            return Err(Error::Shape(format!(
                "edge map {:?} does not match image {:?}",
                edges.dims(),
                low.dims()
            )));
        }
        let x = Tensor::cat(&[low, &edges.to_dtype(low.dtype())?], 1)?;
        self.net.forward(&x, skips)
    }
}

pub fn count_parameters(params: &EnhancerParams) -> usize {
    params.params().num_scalars()
}

/// Inference: `F(I, E, S)` clamped to `[0, 1]`.
pub fn enhance(
    low: &ImageTensor,
    edges: &GrayMap,
    attention: &AttentionMap,
    params: &EnhancerParams,
) -> Result<ImageTensor> {
    let raw = enhance_raw(low, edges, attention, params)?;
    Ok(raw.clamp01())
}

/// Same as [`enhance`] without the final clamp.
pub fn enhance_raw(
    low: &ImageTensor,
    edges: &GrayMap,
    attention: &AttentionMap,
    params: &EnhancerParams,
) -> Result<ImageTensor> {
    if edges.height() != low.height() || edges.width() != low.width() {
        return Err(Error::Shape(format!(
            "edge map {}x{} does not match image {}x{}",
            edges.width(),
            edges.height(),
            low.width(),
            low.height()
        )));
    }
    if attention.base.height() != low.height() || attention.base.width() != low.width() {
        return Err(Error::Shape("attention map does not match image".into()));
    }
    if attention.levels() < EnhancerParams::DEPTH {
        return Err(Error::Shape(format!(
            "attention pyramid has {} levels, enhancer needs {}",
            attention.levels(),
            EnhancerParams::DEPTH
        )));
    }
    let dev = Device::Cpu;
    let dtype = params.dtype();
    let x = low.to_tensor(dtype, &dev)?;
    let e = edges.to_tensor(dtype, &dev)?;
    let gates = attention.to_tensors(dtype, &dev)?;
    let y = params.forward(&x, &e, Skips::Gated(&gates))?;
    ImageTensor::from_tensor(&y)
}
