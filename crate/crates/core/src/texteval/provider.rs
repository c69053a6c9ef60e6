//! Region-score providers: anything that maps an RGB batch to a half-resolution
//! character heatmap. Three backends ship here: an analytic luma stub, a small
//! trainable network, and the CRAFT VGG16-BN architecture for external weights.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, MAGIC};
use crate::domain::{GrayMap, ImageTensor, TextBox};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, AdamConfig, Initializer, ParamStore};
use crate::texteval::heatmap::synth_region_target;

/// A frozen, deterministic region-score network or function.
///
/// `region_score` takes `(N, 3, H, W)` and returns `(N, 1, H/2, W/2)`. When the
/// provider is a network, the output must stay on the autograd tape so that a
/// loss on it back-propagates into the input image.
pub trait RegionScoreProvider {
    fn name(&self) -> &str;

    fn region_score(&self, images: &Tensor) -> Result<Tensor>;

    /// Word-linking heatmap, when the backend predicts one.
    fn affinity_score(&self, _images: &Tensor) -> Result<Option<Tensor>> {
        Ok(None)
    }

    /// Copy of the provider's weights; empty for analytic providers.
    fn parameter_snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        Ok(BTreeMap::new())
    }
}

fn check_even(images: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = images.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("region score needs RGB input, got {c} channels")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("region score needs even dims, got {w}x{h}")));
    }
    Ok((n, c, h, w))
}

fn luma(images: &Tensor) -> Result<Tensor> {
    let r = images.narrow(1, 0, 1)?;
    let g = images.narrow(1, 1, 1)?;
    let b = images.narrow(1, 2, 1)?;
    Ok(((r * 0.299)? + (g * 0.587)? + (b * 0.114)?)?)
}

/// 2x2 mean-pooled BT.601 luma. Differentiable and parameter-free.
#[derive(Debug, Clone, Copy, Default)]
pub struct LumaPoolProvider;

impl RegionScoreProvider for LumaPoolProvider {
    fn name(&self) -> &str {
        "luma-pool"
    }

    fn region_score(&self, images: &Tensor) -> Result<Tensor> {
        check_even(images)?;
        nn::mean_pool2(&luma(images)?)
    }
}

/// Returns the same constant map for every input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantProvider(pub f32);

impl RegionScoreProvider for ConstantProvider {
    fn name(&self) -> &str {
        "constant"
    }

    fn region_score(&self, images: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = check_even(images)?;
        Ok((Tensor::ones((n, 1, h / 2, w / 2), images.dtype(), images.device())? * self.0 as f64)?)
    }
}

/// Single-image convenience wrapper around [`RegionScoreProvider::region_score`].
pub fn region_score(image: &ImageTensor, provider: &dyn RegionScoreProvider) -> Result<GrayMap> {
    if image.height() % 2 != 0 || image.width() % 2 != 0 {
        return Err(Error::Shape(format!(
            "region score needs even dims, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let t = image.to_tensor(DType::F32, &Device::Cpu)?;
    GrayMap::from_tensor(&provider.region_score(&t)?)
}

/// Small convolutional region-score network: two full-resolution conv layers,
/// a 2x2 max pool, three convs (two dilated, to see whole words) and a
/// sigmoid head.
#[derive(Debug, Clone)]
pub struct MiniRegionNet {
    pub width: usize,
    pub params: ParamStore,
}

const MINI_SLOPE: f64 = 0.1;

impl MiniRegionNet {
    pub fn new(width: usize, seed: u64, dtype: DType) -> Result<Self> {
        let mut params = ParamStore::new(dtype);
        let mut init = Initializer::new(seed);
        init.conv(&mut params, "c1", 3, width, 3, MINI_SLOPE)?;
        init.conv(&mut params, "c2", width, width, 3, MINI_SLOPE)?;
        init.conv(&mut params, "c3", width, 2 * width, 3, MINI_SLOPE)?;
        init.conv(&mut params, "c4", 2 * width, 2 * width, 3, MINI_SLOPE)?;
        init.conv(&mut params, "c5", 2 * width, width, 3, MINI_SLOPE)?;
        init.conv(&mut params, "head", width, 1, 1, 1.0)?;
        Ok(Self { width, params })
    }

    pub fn freeze(mut self) -> Self {
        self.params = self.params.freeze();
        self
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        nn::sigmoid(&self.logits(x)?)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let p = &self.params;
        let x = nn::leaky_relu(&nn::conv2d(x, p, "c1")?, MINI_SLOPE)?;
        let x = nn::leaky_relu(&nn::conv2d(&x, p, "c2")?, MINI_SLOPE)?;
        let x = nn::max_pool2(&x)?;
        let x = nn::leaky_relu(&nn::conv2d_dilated(&x, p, "c3", 2)?, MINI_SLOPE)?;
        let x = nn::leaky_relu(&nn::conv2d_dilated(&x, p, "c4", 4)?, MINI_SLOPE)?;
        let x = nn::leaky_relu(&nn::conv2d(&x, p, "c5")?, MINI_SLOPE)?;
        nn::conv2d(&x, p, "head")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut a = Archive::new(serde_json::json!({"kind": "mini_region_net", "width": self.width}));
        self.params.write_into(&mut a, "")?;
        a.save(path)
    }

    fn from_archive(a: &Archive) -> Result<Self> {
        let width = a
            .meta
            .get("width")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Validation("mini region net archive lacks a width".into()))?;
        let net = Self::new(width as usize, 0, DType::F32)?;
        net.params.read_from(a, "")?;
        Ok(net.freeze())
    }
}

impl RegionScoreProvider for MiniRegionNet {
    fn name(&self) -> &str {
        "mini-region-net"
    }

    fn region_score(&self, images: &Tensor) -> Result<Tensor> {
        check_even(images)?;
        self.forward(&images.to_dtype(self.params.dtype())?)
    }

    fn parameter_snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.params.snapshot()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionNetTrainConfig {
    pub width: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RegionNetTrainConfig {
    fn default() -> Self {
        Self {
            width: 16,
            steps: 300,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

/// Trains a [`MiniRegionNet`] against synthesized Gaussian character targets
/// and returns it frozen, together with its per-step loss history.
///
/// The loss is binary cross-entropy against the soft targets; under squared
/// error the sigmoid saturates at the all-background solution because text
/// covers only a small fraction of each map.
pub fn train_region_net(
    images: &[(ImageTensor, Vec<TextBox>)],
    config: &RegionNetTrainConfig,
) -> Result<(MiniRegionNet, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::Argument("region net needs at least one image".into()));
    }
    let net = MiniRegionNet::new(config.width, config.seed, DType::F32)?;
    let dev = Device::Cpu;
    let prior = images
        .iter()
        .map(|(img, boxes)| synth_region_target(boxes, img.width(), img.height()).mean())
        .sum::<f64>()
        / images.len() as f64;
    let prior = prior.clamp(1e-3, 0.5);
    net.params.set("head.bias", &Tensor::new(&[(prior / (1.0 - prior)).ln() as f32], &dev)?)?;
    let data = images
        .iter()
        .map(|(img, boxes)| {
            if img.height() % 2 != 0 || img.width() % 2 != 0 {
                return Err(Error::Shape("region net training images need even dims".into()));
            }
            let target = synth_region_target(boxes, img.width(), img.height());
            Ok((img.to_tensor(DType::F32, &dev)?, target.to_tensor(DType::F32, &dev)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(AdamConfig::default());
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (x, t) = &data[rng.random_range(0..data.len())];
        let loss = bce_with_logits(&net.logits(x)?, t)?;
        history.push(nn::scalar(&loss)?);
        let grads = loss.backward()?;
        opt.step(&net.params, &grads, config.learning_rate)?;
        if step % 100 == 0 {
            debug!("region net step {step}: bce {:.5}", history[step]);
        }
    }
    Ok((net.freeze(), history))
}

/// Mean of `softplus(z) - t z`, the cross-entropy of `sigmoid(z)` against
/// soft targets `t` up to a target-only constant.
fn bce_with_logits(z: &Tensor, t: &Tensor) -> Result<Tensor> {
    let softplus = (z.relu()? + (z.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    Ok((softplus - (z * t)?)?.mean_all()?)
}

/// CRAFT: VGG16-BN backbone with a U-shaped decoder predicting region and
/// affinity scores at half resolution. Parameter names follow the reference
/// PyTorch state dict (`basenet.slice1.0.weight`, `upconv1.conv.0.weight`, ...).
#[derive(Debug, Clone)]
pub struct Craft {
    pub params: ParamStore,
}

const BN_EPS: f64 = 1e-5;
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// `(slice, conv index, in, out)` for the backbone; each conv is followed by
/// batch norm at `index + 1`.
const VGG_CONVS: [(usize, usize, usize, usize); 12] = [
    (1, 0, 3, 64),
    (1, 3, 64, 64),
    (1, 7, 64, 128),
    (1, 10, 128, 128),
    (2, 14, 128, 256),
    (2, 17, 256, 256),
    (3, 21, 256, 256),
    (3, 24, 256, 512),
    (3, 27, 512, 512),
    (4, 31, 512, 512),
    (4, 34, 512, 512),
    (4, 37, 512, 512),
];

/// `(name, in + mid, mid, out)` for the decoder double convolutions.
const UPCONVS: [(&str, usize, usize, usize); 4] = [
    ("upconv1", 1024 + 512, 512, 256),
    ("upconv2", 512 + 256, 256, 128),
    ("upconv3", 256 + 128, 128, 64),
    ("upconv4", 128 + 64, 64, 32),
];

/// `(index, in, out, kernel)` for the classifier head.
const CLS: [(usize, usize, usize, usize); 5] =
    [(0, 32, 32, 3), (2, 32, 32, 3), (4, 32, 16, 3), (6, 16, 16, 1), (8, 16, 2, 1)];

impl Craft {
    /// Randomly initialized (identity batch norm), frozen.
    pub fn random(seed: u64, dtype: DType) -> Result<Self> {
        let mut p = ParamStore::new(dtype);
        let mut init = Initializer::new(seed);
        let bn = |p: &mut ParamStore, name: &str, c: usize| -> Result<()> {
            p.insert(format!("{name}.weight"), &[c], vec![1.0; c])?;
            p.insert(format!("{name}.bias"), &[c], vec![0.0; c])?;
            p.insert(format!("{name}.running_mean"), &[c], vec![0.0; c])?;
            p.insert(format!("{name}.running_var"), &[c], vec![1.0; c])
        };
        for (slice, i, cin, cout) in VGG_CONVS {
            init.conv(&mut p, &format!("basenet.slice{slice}.{i}"), cin, cout, 3, 0.0)?;
            bn(&mut p, &format!("basenet.slice{slice}.{}", i + 1), cout)?;
        }
        init.conv(&mut p, "basenet.slice5.1", 512, 1024, 3, 0.0)?;
        init.conv(&mut p, "basenet.slice5.2", 1024, 1024, 1, 0.0)?;
        for (name, cin, mid, cout) in UPCONVS {
            init.conv(&mut p, &format!("{name}.conv.0"), cin, mid, 1, 0.0)?;
            bn(&mut p, &format!("{name}.conv.1"), mid)?;
            init.conv(&mut p, &format!("{name}.conv.3"), mid, cout, 3, 0.0)?;
            bn(&mut p, &format!("{name}.conv.4"), cout)?;
        }
        for (i, cin, cout, k) in CLS {
            init.conv(&mut p, &format!("conv_cls.{i}"), cin, cout, k, 0.0)?;
        }
        Ok(Self { params: p.freeze() })
    }

    /// Loads weights from a safetensors file (as exported from the reference
    /// PyTorch model; a `module.` prefix is stripped) or from this crate's archive.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let net = Self::random(0, DType::F32)?;
        if bytes.starts_with(MAGIC) {
            let archive = Archive::from_bytes(&bytes)?;
            net.params.read_from(&archive, "")?;
            return Ok(net);
        }
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        let mut archive = Archive::new(serde_json::Value::Null);
        for (name, t) in tensors {
            let name = name.strip_prefix("module.").unwrap_or(&name).to_string();
            if name.ends_with("num_batches_tracked") {
                continue;
            }
            archive.push(name, t.dims().to_vec(), t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?);
        }
        net.params.read_from(&archive, "")?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut a = Archive::new(serde_json::json!({"kind": "craft"}));
        self.params.write_into(&mut a, "")?;
        a.save(path)
    }

    fn conv(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        nn::conv2d(x, &self.params, name)
    }

    fn batch_norm(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let p = &self.params;
        let c = x.dim(1)?;
        let shape = (1, c, 1, 1);
        let mean = p.get(&format!("{name}.running_mean"))?.reshape(shape)?;
        let var = p.get(&format!("{name}.running_var"))?.reshape(shape)?;
        let w = p.get(&format!("{name}.weight"))?.reshape(shape)?;
        let b = p.get(&format!("{name}.bias"))?.reshape(shape)?;
        let scale = (w / (var + BN_EPS)?.sqrt()?)?;
        Ok(x.broadcast_sub(&mean)?.broadcast_mul(&scale)?.broadcast_add(&b)?)
    }

    fn conv_bn(&self, x: &Tensor, slice: usize, i: usize) -> Result<Tensor> {
        let y = self.conv(x, &format!("basenet.slice{slice}.{i}"))?;
        self.batch_norm(&y, &format!("basenet.slice{slice}.{}", i + 1))
    }

    /// Returns `(region, affinity)`, each `(N, 1, H/2, W/2)` and clamped to `[0, 1]`.
    pub fn forward(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, _, h, w) = check_even(images)?;
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Shape(format!("CRAFT needs dims divisible by 16, got {w}x{h}")));
        }
        let dtype = self.params.dtype();
        let dev = images.device();
        let mean = Tensor::new(&IMAGENET_MEAN, dev)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, dev)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let x = images.to_dtype(dtype)?.broadcast_sub(&mean)?.broadcast_div(&std)?;

        let relu = |t: &Tensor| -> Result<Tensor> { Ok(t.relu()?) };
        // slice1: conv-bn-relu x2, pool, conv-bn-relu, conv-bn
        let mut y = relu(&self.conv_bn(&x, 1, 0)?)?;
        y = relu(&self.conv_bn(&y, 1, 3)?)?;
        y = nn::max_pool2(&y)?;
        y = relu(&self.conv_bn(&y, 1, 7)?)?;
        let s1 = self.conv_bn(&y, 1, 10)?;
        // slice2
        y = nn::max_pool2(&relu(&s1)?)?;
        y = relu(&self.conv_bn(&y, 2, 14)?)?;
        let s2 = self.conv_bn(&y, 2, 17)?;
        // slice3
        y = nn::max_pool2(&relu(&s2)?)?;
        y = relu(&self.conv_bn(&y, 3, 21)?)?;
        y = relu(&self.conv_bn(&y, 3, 24)?)?;
        let s3 = self.conv_bn(&y, 3, 27)?;
        // slice4
        y = nn::max_pool2(&relu(&s3)?)?;
        y = relu(&self.conv_bn(&y, 4, 31)?)?;
        y = relu(&self.conv_bn(&y, 4, 34)?)?;
        let s4 = self.conv_bn(&y, 4, 37)?;
        // slice5: 3x3/1 max pool, dilated conv, 1x1 conv
        y = max_pool3_same(&s4)?;
        y = nn::conv2d_dilated(&y, &self.params, "basenet.slice5.1", 6)?;
        let fc7 = self.conv(&y, "basenet.slice5.2")?;

        let sources = [&s3, &s2, &s1];
        let mut y = self.double_conv(&Tensor::cat(&[&fc7, &s4], 1)?, "upconv1")?;
        for (k, src) in sources.iter().enumerate() {
            y = upsample_bilinear2(&y)?;
            y = self.double_conv(&Tensor::cat(&[&y, *src], 1)?, UPCONVS[k + 1].0)?;
        }
        for (i, ..) in CLS.iter().take(4) {
            y = relu(&self.conv(&y, &format!("conv_cls.{i}"))?)?;
        }
        let out = self.conv(&y, "conv_cls.8")?;
        let region = out.narrow(1, 0, 1)?.clamp(0.0, 1.0)?;
        let affinity = out.narrow(1, 1, 1)?.clamp(0.0, 1.0)?;
        Ok((region, affinity))
    }

    fn double_conv(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let y = self.conv(x, &format!("{name}.conv.0"))?;
        let y = self.batch_norm(&y, &format!("{name}.conv.1"))?.relu()?;
        let y = self.conv(&y, &format!("{name}.conv.3"))?;
        Ok(self.batch_norm(&y, &format!("{name}.conv.4"))?.relu()?)
    }
}

impl RegionScoreProvider for Craft {
    fn name(&self) -> &str {
        "craft"
    }

    fn region_score(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward(images)?.0)
    }

    fn affinity_score(&self, images: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(self.forward(images)?.1))
    }

    fn parameter_snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.params.snapshot()
    }
}

/// 3x3 stride-1 max pool with one pixel of padding.
fn max_pool3_same(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let p = x.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let win = p.narrow(2, dy, h)?.narrow(3, dx, w)?;
            out = Some(match out {
                None => win,
                Some(o) => o.maximum(&win)?,
            });
        }
    }
    Ok(out.expect("nine windows"))
}

/// 2x bilinear upsampling with half-pixel centers and edge clamping.
fn upsample_bilinear2(x: &Tensor) -> Result<Tensor> {
    let y = upsample_axis(x, 2)?;
    upsample_axis(&y, 3)
}

fn upsample_axis(x: &Tensor, dim: usize) -> Result<Tensor> {
    let n = x.dim(dim)?;
    let padded = x.pad_with_same(dim, 1, 1)?;
    let prev = padded.narrow(dim, 0, n)?;
    let next = padded.narrow(dim, 2, n)?;
    let even = ((x * 0.75)? + (prev * 0.25)?)?;
    let odd = ((x * 0.75)? + (next * 0.25)?)?;
    let stacked = Tensor::stack(&[&even, &odd], dim + 1)?;
    let mut dims = x.dims().to_vec();
    dims[dim] *= 2;
    Ok(stacked.reshape(dims)?)
}

/// Loads a detector from a weights file: a mini region net or CRAFT archive
/// written by this crate, or CRAFT safetensors.
pub fn load_provider(path: impl AsRef<Path>) -> Result<Box<dyn RegionScoreProvider>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        let a = Archive::from_bytes(&bytes)?;
        match a.meta.get("kind").and_then(|k| k.as_str()) {
            Some("mini_region_net") => return Ok(Box::new(MiniRegionNet::from_archive(&a)?)),
            Some("craft") => {
                let net = Craft::random(0, DType::F32)?;
                net.params.read_from(&a, "")?;
                return Ok(Box::new(net));
            }
            other => {
                return Err(Error::Validation(format!(
                    "{} is not a detector archive (kind {other:?})",
                    path.display()
                )))
            }
        }
    }
    Ok(Box::new(Craft::load(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_shapes_and_values() {
        let white = ImageTensor::filled(64, 64, 1.0);
        let r = region_score(&white, &LumaPoolProvider).unwrap();
        assert_eq!((r.height(), r.width()), (32, 32));
        assert!(r.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));

        // left half black, right half white; 2x2 blocks never straddle column 4
        let img = ImageTensor::from_fn(4, 8, |_, _, x| if x >= 4 { 1.0 } else { 0.0 });
        let r = region_score(&img, &LumaPoolProvider).unwrap();
        for y in 0..2 {
            for x in 0..4 {
                let expect = if x >= 2 { 1.0 } else { 0.0 };
                assert!((r.get(y, x) - expect).abs() < 1e-6);
            }
        }
        let img = ImageTensor::from_fn(2, 6, |_, _, x| if x >= 3 { 1.0 } else { 0.0 });
        let r = region_score(&img, &LumaPoolProvider).unwrap();
        let row: Vec<f32> = (0..3).map(|x| r.get(0, x)).collect();
        assert!((row[1] - 0.5).abs() < 1e-6, "{row:?}");
    }

    #[test]
    fn odd_dims_rejected() {
        let img = ImageTensor::zeros(5, 6);
        assert!(matches!(region_score(&img, &LumaPoolProvider), Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_matches_half_pixel_formula() {
        let x = Tensor::new(&[[[[0.0f64, 4.0, 8.0]]]], &Device::Cpu).unwrap();
        let y = upsample_axis(&x, 3).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(v, vec![0.0, 1.0, 3.0, 5.0, 7.0, 8.0]);
    }

    #[test]
    fn max_pool3_keeps_shape() {
        let x = Tensor::new(&[[[[1.0f64, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]]], &Device::Cpu).unwrap();
        let y = max_pool3_same(&x).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(v, vec![1.0, 1.0, 0.0, 1.0, 2.0, 2.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn craft_shapes_and_archive_round_trip() {
        let net = Craft::random(3, DType::F32).unwrap();
        let img = ImageTensor::from_fn(32, 48, |c, y, x| ((c + y * x) % 9) as f32 / 9.0);
        let t = img.to_tensor(DType::F32, &Device::Cpu).unwrap();
        let (r, a) = net.forward(&t).unwrap();
        assert_eq!(r.dims(), &[1, 1, 16, 24]);
        assert_eq!(a.dims(), &[1, 1, 16, 24]);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("craft.llt");
        net.save(&p).unwrap();
        let back = load_provider(&p).unwrap();
        assert_eq!(back.name(), "craft");
        let r2 = back.region_score(&t).unwrap();
        assert_eq!(
            r.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            r2.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn craft_reads_safetensors_with_module_prefix() {
        let net = Craft::random(5, DType::F32).unwrap();
        let mut map = std::collections::HashMap::new();
        for (name, v) in net.params.vars() {
            map.insert(format!("module.{name}"), v.as_tensor().clone());
        }
        map.insert(
            "module.basenet.slice1.1.num_batches_tracked".to_string(),
            Tensor::new(&[0f32], &Device::Cpu).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("craft.safetensors");
        candle_core::safetensors::save(&map, &p).unwrap();
        let back = Craft::load(&p).unwrap();
        assert_eq!(back.params.snapshot().unwrap(), net.params.snapshot().unwrap());
    }

    #[test]
    fn mini_net_archive_round_trip() {
        let net = MiniRegionNet::new(4, 9, DType::F32).unwrap().freeze();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mini.llt");
        net.save(&p).unwrap();
        let back = load_provider(&p).unwrap();
        assert_eq!(back.parameter_snapshot().unwrap(), net.parameter_snapshot().unwrap());
    }
}
