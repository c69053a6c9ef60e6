//! Training objective: weighted sum of an L1 term, an MS-SSIM term and a
//! text-detection term comparing region-score maps of the enhanced image and
//! the ground truth.
//!
//! Tensor-level functions take `(N, 3, H, W)` batches and stay on the autograd
//! tape; the `ImageTensor` wrappers return plain numbers.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::domain::ImageTensor;
use crate::error::{Error, Result};
use crate::nn;
use crate::texteval::RegionScoreProvider;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub ms_ssim: f64,
    pub text: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 0.85,
            ms_ssim: 0.15,
            text: 0.425,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("l1", self.l1), ("ms_ssim", self.ms_ssim), ("text", self.text)] {
            if w.is_nan() || w < 0.0 || !w.is_finite() {
                return Err(Error::Argument(format!("loss weight {name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Which optional terms take part; the L1 term is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub ms_ssim: bool,
    pub text: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            ms_ssim: true,
            text: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimParams {
    /// Per-scale exponents, finest first; their count is the number of scales.
    /// The coarsest entry also weights the luminance term.
    pub scale_weights: Vec<f64>,
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

/// Standard five-scale exponents as published; they sum to 1.0001, so the
/// defaults are these divided by their sum.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

impl Default for MsSsimParams {
    fn default() -> Self {
        let sum: f64 = MS_SSIM_WEIGHTS.iter().sum();
        Self {
            scale_weights: MS_SSIM_WEIGHTS.iter().map(|w| w / sum).collect(),
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl MsSsimParams {
    /// The first `scales` standard weights, renormalized to sum to one.
    pub fn with_scales(scales: usize) -> Result<Self> {
        if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
            return Err(Error::Argument(format!(
                "MS-SSIM supports 1..={} scales, got {scales}",
                MS_SSIM_WEIGHTS.len()
            )));
        }
        let head = &MS_SSIM_WEIGHTS[..scales];
        let sum: f64 = head.iter().sum();
        Ok(Self {
            scale_weights: head.iter().map(|w| w / sum).collect(),
            ..Self::default()
        })
    }

    pub fn scales(&self) -> usize {
        self.scale_weights.len()
    }

    /// Smallest side that survives `scales - 1` halvings with a full window left.
    pub fn min_side(&self) -> usize {
        self.window_size << (self.scales().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_weights.is_empty() {
            return Err(Error::Argument("MS-SSIM needs at least one scale".into()));
        }
        let sum: f64 = self.scale_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("MS-SSIM weights sum to {sum}, expected 1")));
        }
        if self.window_size == 0 || self.window_size % 2 == 0 || self.sigma <= 0.0 {
            return Err(Error::Argument("MS-SSIM window must be odd with sigma > 0".into()));
        }
        Ok(())
    }

    fn c1(&self) -> f64 {
        (self.k1 * 1.0).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * 1.0).powi(2)
    }

    fn kernel_1d(&self) -> Vec<f64> {
        let r = (self.window_size / 2) as f64;
        let g: Vec<f64> = (0..self.window_size)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean absolute error over every element.
pub fn l1_loss_t(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same(pred, target)?;
    let target = target.to_dtype(pred.dtype())?;
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// Banded `(n, n - k + 1)` matrix whose column `i` holds the taps at rows
/// `i..i + k`: right-multiplying by it is a valid 1-D correlation.
fn band(n: usize, taps: &[f64], like: &Tensor) -> Result<Tensor> {
    let k = taps.len();
    let out = n + 1 - k;
    let mut m = vec![0.0; n * out];
    for i in 0..out {
        for (t, &v) in taps.iter().enumerate() {
            m[(i + t) * out + i] = v;
        }
    }
    Ok(Tensor::from_vec(m, (n, out), like.device())?.to_dtype(like.dtype())?)
}

/// Separable Gaussian blur without padding on `(B, 1, H, W)`, written as two
/// matrix products so that the backward pass stays cheap.
fn blur(x: &Tensor, taps: &[f64]) -> Result<Tensor> {
    let (b, _, h, w) = x.dims4()?;
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let horizontal = x.reshape((b * h, w))?.matmul(&band(w, taps, x)?)?;
    let vertical = band(h, taps, x)?.t()?.broadcast_matmul(&horizontal.reshape((b, h, ow))?)?;
    Ok(vertical.reshape((b, 1, oh, ow))?)
}

/// Per-plane `(mean contrast-structure, mean SSIM)` at one scale, each `(B,)`.
fn ssim_terms(x: &Tensor, y: &Tensor, params: &MsSsimParams) -> Result<(Tensor, Tensor)> {
    let k = params.kernel_1d();
    let b = x.dim(0)?;
    let stacked = Tensor::cat(&[x, y, &x.sqr()?, &y.sqr()?, &(x * y)?], 0)?;
    let blurred = blur(&stacked, &k)?;
    let part = |i: usize| blurred.narrow(0, i * b, b);
    let (mu_x, mu_y) = (part(0)?, part(1)?);
    let mu_xx = mu_x.sqr()?;
    let mu_yy = mu_y.sqr()?;
    let mu_xy = (&mu_x * &mu_y)?;
    let s_xx = (part(2)? - &mu_xx)?;
    let s_yy = (part(3)? - &mu_yy)?;
    let s_xy = (part(4)? - &mu_xy)?;
    let (c1, c2) = (params.c1(), params.c2());
    let cs_map = (((s_xy * 2.0)? + c2)? / ((s_xx + s_yy)? + c2)?)?;
    let l_map = (((mu_xy * 2.0)? + c1)? / ((mu_xx + mu_yy)? + c1)?)?;
    let ssim_map = (&l_map * &cs_map)?;
    let cs = cs_map.reshape((b, ()))?.mean(1)?;
    let ssim = ssim_map.reshape((b, ()))?.mean(1)?;
    Ok((cs, ssim))
}

/// Multi-scale SSIM averaged over batch and channels.
///
/// Scale `j < M` contributes its mean contrast-structure term raised to
/// `scale_weights[j]`; the coarsest scale contributes the mean full SSIM
/// (luminance included). Scales are separated by 2x2 mean pooling. With a
/// single scale this is plain SSIM.
pub fn ms_ssim_t(pred: &Tensor, target: &Tensor, params: &MsSsimParams) -> Result<Tensor> {
    check_same(pred, target)?;
    params.validate()?;
    let (n, c, h, w) = pred.dims4()?;
    let min = params.min_side();
    if h < min || w < min {
        return Err(Error::Shape(format!(
            "MS-SSIM with {} scales and window {} needs at least {min}x{min}, got {w}x{h}",
            params.scales(),
            params.window_size
        )));
    }
    let mut x = pred.reshape((n * c, 1, h, w))?;
    let mut y = target.to_dtype(pred.dtype())?.reshape((n * c, 1, h, w))?;
    let m = params.scales();
    let mut acc: Option<Tensor> = None;
    for (j, &weight) in params.scale_weights.iter().enumerate() {
        let (cs, ssim) = ssim_terms(&x, &y, params)?;
        let term = if j + 1 == m { ssim } else { cs };
        let term = if m == 1 {
            term
        } else {
            // fractional powers need a positive base
            term.maximum(1e-10)?.powf(weight)?
        };
        acc = Some(match acc {
            None => term,
            Some(a) => (a * term)?,
        });
        if j + 1 < m {
            x = nn::mean_pool2(&x)?;
            y = nn::mean_pool2(&y)?;
        }
    }
    Ok(acc.expect("at least one scale").mean_all()?)
}

pub fn ms_ssim_loss_t(pred: &Tensor, target: &Tensor, params: &MsSsimParams) -> Result<Tensor> {
    Ok((1.0 - ms_ssim_t(pred, target, params)?)?)
}

/// Mean absolute difference of region scores; the target branch is detached.
pub fn text_detection_loss_t(
    pred: &Tensor,
    target: &Tensor,
    detector: &dyn RegionScoreProvider,
) -> Result<Tensor> {
    check_same(pred, target)?;
    let (n, _, h, w) = pred.dims4()?;
    let rp = detector.region_score(pred)?;
    let rt = detector.region_score(&target.to_dtype(pred.dtype())?)?.detach();
    let expected = [n, 1, h / 2, w / 2];
    if rp.dims() != expected || rt.dims() != expected {
        return Err(Error::Contract(format!(
            "detector {} returned {:?} / {:?}, expected {expected:?}",
            detector.name(),
            rp.dims(),
            rt.dims()
        )));
    }
    let dtype = pred.dtype();
    Ok((rp.to_dtype(dtype)? - rt.to_dtype(dtype)?)?.abs()?.mean_all()?)
}

/// Raw component values, their weighted contributions and the total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub ms_ssim: f64,
    pub text: f64,
    pub weighted_l1: f64,
    pub weighted_ms_ssim: f64,
    pub weighted_text: f64,
    pub total: f64,
}

/// Weighted objective; disabled terms are neither computed nor counted.
pub fn total_loss_t(
    pred: &Tensor,
    target: &Tensor,
    detector: &dyn RegionScoreProvider,
    weights: &LossWeights,
    params: &MsSsimParams,
    toggles: &LossToggles,
) -> Result<(Tensor, LossBreakdown)> {
    weights.validate()?;
    let l1 = l1_loss_t(pred, target)?;
    let mut b = LossBreakdown {
        l1: nn::scalar(&l1)?,
        ..Default::default()
    };
    b.weighted_l1 = weights.l1 * b.l1;
    let mut total = (l1 * weights.l1)?;
    if toggles.ms_ssim {
        let m = ms_ssim_loss_t(pred, target, params)?;
        b.ms_ssim = nn::scalar(&m)?;
        b.weighted_ms_ssim = weights.ms_ssim * b.ms_ssim;
        total = (total + (m * weights.ms_ssim)?)?;
    }
    if toggles.text {
        let t = text_detection_loss_t(pred, target, detector)?;
        b.text = nn::scalar(&t)?;
        b.weighted_text = weights.text * b.text;
        total = (total + (t * weights.text)?)?;
    }
    b.total = b.weighted_l1 + b.weighted_ms_ssim + b.weighted_text;
    Ok((total, b))
}

fn pair(pred: &ImageTensor, target: &ImageTensor) -> Result<(Tensor, Tensor)> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction {}x{} and target {}x{} differ",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    let dev = Device::Cpu;
    Ok((pred.to_tensor(DType::F64, &dev)?, target.to_tensor(DType::F64, &dev)?))
}

pub fn l1_loss(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    let (p, t) = pair(pred, target)?;
    nn::scalar(&l1_loss_t(&p, &t)?)
}

pub fn ms_ssim(pred: &ImageTensor, target: &ImageTensor, params: &MsSsimParams) -> Result<f64> {
    let (p, t) = pair(pred, target)?;
    nn::scalar(&ms_ssim_t(&p, &t, params)?)
}

pub fn ms_ssim_loss(pred: &ImageTensor, target: &ImageTensor, params: &MsSsimParams) -> Result<f64> {
    Ok(1.0 - ms_ssim(pred, target, params)?)
}

pub fn text_detection_loss(
    pred: &ImageTensor,
    target: &ImageTensor,
    detector: &dyn RegionScoreProvider,
) -> Result<f64> {
    let (p, t) = pair(pred, target)?;
    nn::scalar(&text_detection_loss_t(&p, &t, detector)?)
}

pub fn total_loss(
    pred: &ImageTensor,
    target: &ImageTensor,
    detector: &dyn RegionScoreProvider,
    weights: &LossWeights,
    params: &MsSsimParams,
    toggles: &LossToggles,
) -> Result<LossBreakdown> {
    let (p, t) = pair(pred, target)?;
    Ok(total_loss_t(&p, &t, detector, weights, params, toggles)?.1)
}
