//! Edge maps: a deterministic Sobel teacher and a small trainable U-Net that
//! learns to predict bright-image edges from the dark input.

use candle_core::{DType, Device, Tensor};
use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::domain::{GrayMap, ImageTensor, PairedSample};
use crate::enhancer::{Skips, UNet, UNetSchedule};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, AdamConfig};

pub type EdgeMap = GrayMap;

/// Anything that can produce target edges for a bright image.
pub trait EdgeTeacher {
    fn edges(&self, image: &ImageTensor) -> Result<EdgeMap>;
}

impl<F> EdgeTeacher for F
where
    F: Fn(&ImageTensor) -> Result<EdgeMap>,
{
    fn edges(&self, image: &ImageTensor) -> Result<EdgeMap> {
        self(image)
    }
}

/// Sobel gradient magnitude of the luma.
#[derive(Debug, Clone, Copy, Default)]
pub struct SobelTeacher;

impl EdgeTeacher for SobelTeacher {
    fn edges(&self, image: &ImageTensor) -> Result<EdgeMap> {
        Ok(teacher_edges(image))
    }
}

/// Largest possible Sobel magnitude for inputs in `[0, 1]`.
const SOBEL_MAX: f32 = 4.0 * std::f32::consts::SQRT_2;

/// Sobel magnitude of the BT.601 luma with replicated borders, scaled to `[0, 1]`.
pub fn teacher_edges(image: &ImageTensor) -> EdgeMap {
    let luma = image.luma();
    let (h, w) = (luma.height(), luma.width());
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        luma.get(yy, xx)
    };
    GrayMap::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
        let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        ((gx * gx + gy * gy).sqrt() / SOBEL_MAX).clamp(0.0, 1.0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEstimatorConfig {
    pub depth: usize,
    pub base_width: usize,
    pub leaky_slope: f64,
}

impl Default for EdgeEstimatorConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_width: 16,
            leaky_slope: 0.2,
        }
    }
}

impl EdgeEstimatorConfig {
    pub fn schedule(&self) -> UNetSchedule {
        UNetSchedule {
            in_channels: 3,
            out_channels: 1,
            encoder: (0..self.depth).map(|i| self.base_width << i).collect(),
            bottleneck: self.base_width << self.depth,
            leaky_slope: self.leaky_slope,
        }
    }
}

/// Weights of the edge U-Net (sigmoid output).
#[derive(Debug, Clone)]
pub struct EdgeEstimatorParams {
    pub config: EdgeEstimatorConfig,
    pub net: UNet,
}

impl EdgeEstimatorParams {
    pub fn new(config: EdgeEstimatorConfig, seed: u64, dtype: DType) -> Result<Self> {
        let net = UNet::new(config.schedule(), seed, dtype)?;
        Ok(Self { config, net })
    }

    pub fn freeze(mut self) -> Self {
        self.net.params = self.net.params.freeze();
        self
    }

    /// `(N, 3, H, W)` to `(N, 1, H, W)` in `(0, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        nn::sigmoid(&self.net.forward(x, Skips::Plain)?)
    }

    pub fn write_into(&self, archive: &mut Archive, prefix: &str) -> Result<()> {
        self.net.params.write_into(archive, prefix)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut a = Archive::new(serde_json::json!({
            "kind": "edge_estimator",
            "config": self.config,
        }));
        self.write_into(&mut a, "")?;
        a.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let a = Archive::load(path)?;
        let config: EdgeEstimatorConfig = serde_json::from_value(
            a.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Validation("edge checkpoint lacks a config".into()))?,
        )?;
        let p = Self::new(config, 0, DType::F32)?;
        p.net.params.read_from(&a, "")?;
        Ok(p)
    }
}

pub fn estimate_edges(image: &ImageTensor, params: &EdgeEstimatorParams) -> Result<EdgeMap> {
    let x = image.to_tensor(params.net.params.dtype(), &Device::Cpu)?;
    GrayMap::from_tensor(&params.forward(&x)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTrainConfig {
    pub estimator: EdgeEstimatorConfig,
    pub steps: usize,
    pub learning_rate: f64,
    /// Square random crop per step; `None` trains on whole images.
    pub crop: Option<usize>,
    pub seed: u64,
}

impl Default for EdgeTrainConfig {
    fn default() -> Self {
        Self {
            estimator: EdgeEstimatorConfig::default(),
            steps: 200,
            learning_rate: 1e-3,
            crop: Some(128),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeTrainOutcome {
    pub params: EdgeEstimatorParams,
    pub loss_history: Vec<f64>,
}

/// Fits the estimator so that its prediction on the low-light image matches
/// the teacher's edges of the ground truth (mean absolute error).
pub fn train_edge_estimator(
    samples: &[PairedSample],
    config: &EdgeTrainConfig,
    teacher: &dyn EdgeTeacher,
) -> Result<EdgeTrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Argument("edge estimator needs at least one sample".into()));
    }
    let params = EdgeEstimatorParams::new(config.estimator.clone(), config.seed, DType::F32)?;
    let factor = 1usize << config.estimator.depth;
    let targets = samples
        .iter()
        .map(|s| teacher.edges(&s.gt))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ed9e);
    let mut opt = Adam::new(AdamConfig::default());
    let mut history = Vec::with_capacity(config.steps);
    let dev = Device::Cpu;
    for step in 0..config.steps {
        let i = step % samples.len();
        let (low, target) = (&samples[i].low, &targets[i]);
        let (h, w) = (low.height(), low.width());
        let (ch, cw) = match config.crop {
            Some(c) => (c.min(h) / factor * factor, c.min(w) / factor * factor),
            None => (h / factor * factor, w / factor * factor),
        };
        if ch == 0 || cw == 0 {
            return Err(Error::Shape(format!(
                "sample {} ({w}x{h}) is smaller than 2^{}",
                samples[i].id, config.estimator.depth
            )));
        }
        let y0 = rng.random_range(0..=h - ch);
        let x0 = rng.random_range(0..=w - cw);
        let x = low.crop(x0, y0, cw, ch)?.to_tensor(DType::F32, &dev)?;
        let t = GrayMap::from_fn(ch, cw, |y, x| target.get(y0 + y, x0 + x)).to_tensor(DType::F32, &dev)?;
        let loss = (params.forward(&x)? - t)?.abs()?.mean_all()?;
        let value = nn::scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step,
                sample_id: samples[i].id.clone(),
                detail: "edge estimator loss".into(),
            });
        }
        history.push(value);
        let grads = loss.backward()?;
        opt.step(&params.net.params, &grads, config.learning_rate)?;
        if step % 50 == 0 {
            debug!("edge step {step}: mae {value:.5}");
        }
    }
    Ok(EdgeTrainOutcome {
        params,
        loss_history: history,
    })
}
