//! Parameter storage, layer primitives and the Adam optimizer shared by the
//! enhancer, the edge estimator and the region-score networks.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};

/// Named parameters of one network.
///
/// A frozen store hands out detached tensors, so gradients still flow through
/// the network's inputs but never accumulate on its weights.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    frozen: bool,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            frozen: false,
            dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f32>) -> Result<()> {
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        self.vars.insert(name.into(), Var::from_tensor(&t)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        Ok(if self.frozen {
            v.as_detached_tensor()
        } else {
            v.as_tensor().clone()
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Flattened `f32` copy of every parameter, for equality checks and export.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)))
            .collect()
    }

    pub fn all_finite(&self) -> Result<bool> {
        for v in self.snapshot()?.values() {
            if v.iter().any(|x| !x.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Deep copy in another dtype (used for `f64` gradient checks).
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, v) in &self.vars {
            vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().to_dtype(dtype)?.copy()?)?);
        }
        Ok(Self {
            vars,
            frozen: self.frozen,
            dtype,
        })
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&self) -> Result<()> {
        for v in self.vars.values() {
            v.set(&v.zeros_like()?)?;
        }
        Ok(())
    }

    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        v.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn write_into(&self, archive: &mut Archive, prefix: &str) -> Result<()> {
        for (k, v) in &self.vars {
            archive.push(
                format!("{prefix}{k}"),
                v.dims().to_vec(),
                v.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
            );
        }
        Ok(())
    }

    /// Overwrites every parameter from `archive`; names and shapes must match exactly.
    pub fn read_from(&self, archive: &Archive, prefix: &str) -> Result<()> {
        let found: Vec<_> = archive.with_prefix(prefix).collect();
        if found.len() != self.vars.len() {
            return Err(Error::Validation(format!(
                "archive holds {} arrays under {prefix:?}, network expects {}",
                found.len(),
                self.vars.len()
            )));
        }
        for (name, arr) in found {
            let v = self
                .vars
                .get(name)
                .ok_or_else(|| Error::Validation(format!("unexpected array {prefix}{name}")))?;
            if v.dims() != arr.shape.as_slice() {
                return Err(Error::Validation(format!(
                    "array {prefix}{name} has shape {:?}, expected {:?}",
                    arr.shape,
                    v.dims()
                )));
            }
            let t = Tensor::from_slice(&arr.data, arr.shape.as_slice(), &Device::Cpu)?;
            v.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Seeded initializer; parameters are drawn in construction order.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fan-in scaled uniform (He/Kaiming for a leaky rectifier).
    fn kaiming(&mut self, n: usize, fan_in: usize, slope: f64) -> Vec<f32> {
        let bound = (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt() as f32;
        (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect()
    }

    /// `name.weight` of shape `(out, in, k, k)` and zero `name.bias`.
    pub fn conv(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        slope: f64,
    ) -> Result<()> {
        let w = self.kaiming(out_ch * in_ch * k * k, in_ch * k * k, slope);
        store.insert(format!("{name}.weight"), &[out_ch, in_ch, k, k], w)?;
        store.insert(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch])
    }

    /// Transposed conv weight `(in, out, k, k)` and zero bias.
    pub fn conv_transpose(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        slope: f64,
    ) -> Result<()> {
        let w = self.kaiming(in_ch * out_ch * k * k, in_ch * k * k, slope);
        store.insert(format!("{name}.weight"), &[in_ch, out_ch, k, k], w)?;
        store.insert(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch])
    }
}

/// Same-padded stride-1 convolution plus bias.
pub fn conv2d(x: &Tensor, store: &ParamStore, name: &str) -> Result<Tensor> {
    conv2d_dilated(x, store, name, 1)
}

pub fn conv2d_dilated(x: &Tensor, store: &ParamStore, name: &str, dilation: usize) -> Result<Tensor> {
    let w = store.get(&format!("{name}.weight"))?;
    let b = store.get(&format!("{name}.bias"))?;
    let y = im2col_conv(x, &w, dilation)?;
    Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
}

/// Same-padded convolution as shifted slices plus one matmul. Both passes
/// then run through the GEMM kernels, which on CPU is several times faster
/// than the direct convolution's backward pass.
fn im2col_conv(x: &Tensor, w: &Tensor, dilation: usize) -> Result<Tensor> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, wc, k, k2) = w.dims4()?;
    if wc != c || k != k2 || k % 2 == 0 {
        return Err(Error::Shape(format!(
            "kernel {:?} does not fit input {:?}",
            w.dims(),
            x.dims()
        )));
    }
    if k == 1 {
        let y = w.reshape((o, c))?.broadcast_matmul(&x.reshape((n, c, h * wd))?)?;
        return Ok(y.reshape((n, o, h, wd))?);
    }
    let pad = dilation * (k - 1) / 2;
    let xp = x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
    let mut taps = Vec::with_capacity(k * k);
    for dy in 0..k {
        let row = xp.narrow(2, dy * dilation, h)?;
        for dx in 0..k {
            taps.push(row.narrow(3, dx * dilation, wd)?);
        }
    }
    let cols = Tensor::stack(&taps, 2)?.reshape((n, c * k * k, h * wd))?;
    let y = w.reshape((o, c * k * k))?.broadcast_matmul(&cols)?;
    Ok(y.reshape((n, o, h, wd))?)
}

/// 2x2 stride-2 transposed convolution plus bias; weight is `(in, out, 2, 2)`.
pub fn upconv2x2(x: &Tensor, store: &ParamStore, name: &str) -> Result<Tensor> {
    let w = store.get(&format!("{name}.weight"))?;
    let b = store.get(&format!("{name}.bias"))?;
    let (n, c, h, wd) = x.dims4()?;
    let (wc, o, kh, kw) = w.dims4()?;
    if wc != c || (kh, kw) != (2, 2) {
        return Err(Error::Shape(format!(
            "transposed kernel {:?} does not fit input {:?}",
            w.dims(),
            x.dims()
        )));
    }
    // out[n, o, 2y + a, 2x + b] = sum_c x[n, c, y, x] w[c, o, a, b]
    let wm = w.reshape((c, o * 4))?.t()?;
    let y = wm.broadcast_matmul(&x.reshape((n, c, h * wd))?)?;
    let y = y
        .reshape((n, o, 2, 2, h, wd))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((n, o, 2 * h, 2 * wd))?;
    Ok(y.broadcast_add(&b.reshape((1, o, 1, 1))?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// 2x2 stride-2 max pooling on `(N, C, H, W)`.
///
/// Written as reshape + max because the fused pooling kernel's backward pass
/// does not route gradients to the arg-max only.
pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max_pool2 needs even dims, got {h}x{w}")));
    }
    Ok(x.reshape((n, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

/// 2x2 stride-2 mean pooling on `(N, C, H, W)`; odd trailing rows/columns are dropped.
pub fn mean_pool2(x: &Tensor) -> Result<Tensor> {
    Ok(x.avg_pool2d(2)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; state is exportable for checkpoints.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `store` that has a gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, var) in store.vars() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients carry their own graph; keep it out of the moments
            let g = g.detach();
            let (m, v) = match self.moments.get(name) {
                Some(mv) => mv.clone(),
                None => (var.zeros_like()?, var.zeros_like()?),
            };
            let m = ((m * beta1)? + (&g * (1.0 - beta1))?)?;
            let v = ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let delta = (m_hat / (v_hat.sqrt()? + eps)?)?;
            var.set(&(var.as_tensor() - (delta * lr)?)?)?;
            self.moments.insert(name.to_string(), (m, v));
        }
        Ok(())
    }

    pub fn write_into(&self, archive: &mut Archive, prefix: &str) -> Result<()> {
        for (k, (m, v)) in &self.moments {
            archive.push(
                format!("{prefix}m.{k}"),
                m.dims().to_vec(),
                m.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
            );
            archive.push(
                format!("{prefix}v.{k}"),
                v.dims().to_vec(),
                v.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
            );
        }
        Ok(())
    }

    pub fn read_from(
        config: AdamConfig,
        step: u64,
        archive: &Archive,
        prefix: &str,
        dtype: DType,
    ) -> Result<Self> {
        let mut firsts = BTreeMap::new();
        let mut seconds = BTreeMap::new();
        for (name, arr) in archive.with_prefix(prefix) {
            let t = Tensor::from_slice(&arr.data, arr.shape.as_slice(), &Device::Cpu)?.to_dtype(dtype)?;
            if let Some(k) = name.strip_prefix("m.") {
                firsts.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("v.") {
                seconds.insert(k.to_string(), t);
            } else {
                return Err(Error::Validation(format!("unexpected optimizer array {name}")));
            }
        }
        let mut moments = BTreeMap::new();
        for (k, m) in firsts {
            let v = seconds
                .remove(&k)
                .ok_or_else(|| Error::Validation(format!("optimizer state for {k} lacks a second moment")))?;
            moments.insert(k, (m, v));
        }
        Ok(Self {
            config,
            step,
            moments,
        })
    }
}

/// Reads a scalar loss tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
