//! Independent reference implementations and helpers shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use lowlight_text::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(h, w, |_, _, _| rng.random::<f32>())
}

/// Elementwise mean absolute difference, accumulated in `f64`.
pub fn brute_l1(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let mut s = 0.0;
    for c in 0..3 {
        for y in 0..a.height() {
            for x in 0..a.width() {
                s += (a.get(c, y, x) as f64 - b.get(c, y, x) as f64).abs();
            }
        }
    }
    s / (3 * a.height() * a.width()) as f64
}

fn luma_at(img: &ImageTensor, y: usize, x: usize) -> f64 {
    0.299 * img.get(0, y, x) as f64 + 0.587 * img.get(1, y, x) as f64 + 0.114 * img.get(2, y, x) as f64
}

/// Text loss under the luma stub: 2x2 block means of BT.601 luma.
pub fn brute_stub_text_loss(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (h, w) = (a.height() / 2, a.width() / 2);
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            let block = |img: &ImageTensor| {
                (luma_at(img, 2 * y, 2 * x)
                    + luma_at(img, 2 * y, 2 * x + 1)
                    + luma_at(img, 2 * y + 1, 2 * x)
                    + luma_at(img, 2 * y + 1, 2 * x + 1))
                    / 4.0
            };
            s += (block(a) - block(b)).abs();
        }
    }
    s / (h * w) as f64
}

/// Mean SSIM straight from the definition: 11x11 Gaussian window
/// (sigma 1.5), valid positions only, averaged over channels.
pub fn ssim_direct(a: &ImageTensor, b: &ImageTensor) -> f64 {
    const K: usize = 11;
    let sigma = 1.5f64;
    let mut win = [[0.0f64; K]; K];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (oh, ow) = (a.height() - K + 1, a.width() - K + 1);
    let mut acc = 0.0;
    for c in 0..3 {
        for y in 0..oh {
            for x in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let wgt = win[i][j] / total;
                        let p = a.get(c, y + i, x + j) as f64;
                        let q = b.get(c, y + i, x + j) as f64;
                        mx += wgt * p;
                        my += wgt * q;
                        sxx += wgt * p * p;
                        syy += wgt * q * q;
                        sxy += wgt * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    acc / (3 * oh * ow) as f64
}

/// Analytic gradient of scalar `f` at `x` and its central finite-difference
/// estimate; returns `(norm-wise relative error, worst element error)`.
pub fn gradient_check(
    x: &[f64],
    shape: (usize, usize, usize, usize),
    f: impl Fn(&Tensor) -> lowlight_text::Result<Tensor>,
    h: f64,
) -> (f64, f64) {
    let dev = Device::Cpu;
    let var = Var::from_vec(x.to_vec(), shape, &dev).unwrap();
    let out = f(var.as_tensor()).unwrap();
    let grads = out.backward().unwrap();
    let analytic: Vec<f64> = grads
        .get(var.as_tensor())
        .expect("input receives a gradient")
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    let eval = |v: Vec<f64>| -> f64 {
        let t = Tensor::from_vec(v, shape, &dev).unwrap();
        f(&t).unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        numeric.push((eval(plus) - eval(minus)) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max);
    (diff / na.max(nn).max(1e-300), worst)
}

pub fn to_f64_tensor(img: &ImageTensor) -> Tensor {
    img.to_tensor(DType::F64, &Device::Cpu).unwrap()
}
