mod common;

use candle_core::{DType, Device};
use common::{brute_l1, brute_stub_text_loss, gradient_check, random_image, ssim_direct, to_f64_tensor};
use lowlight_text::losses::{
    l1_loss, ms_ssim, ms_ssim_loss, text_detection_loss, text_detection_loss_t, total_loss, total_loss_t,
};
use lowlight_text::texteval::{LumaPoolProvider, MiniRegionNet, RegionScoreProvider};
use lowlight_text::{ImageTensor, LossToggles, LossWeights, MsSsimParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noisy(x: &ImageTensor, sigma: f32, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0f32, sigma).unwrap();
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += n.sample(&mut rng);
    }
    out
}

#[test]
fn ms_ssim_decreases_with_noise() {
    let x = random_image(64, 64, 1).map(|v| 0.2 + 0.6 * v);
    let p = MsSsimParams::with_scales(3).unwrap();
    let values: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&s| ms_ssim(&x, &noisy(&x, s, 7), &p).unwrap()).collect();
    assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
    let losses: Vec<f64> = [0.01, 0.05, 0.1]
        .iter()
        .map(|&s| ms_ssim_loss(&x, &noisy(&x, s, 7), &p).unwrap())
        .collect();
    assert!(losses[0] < losses[1] && losses[1] < losses[2]);
    for (l, v) in losses.iter().zip(&values) {
        assert_eq!(*l, 1.0 - v);
    }
}

#[test]
fn single_scale_matches_direct_ssim_on_11x11() {
    let a = random_image(11, 11, 3);
    let b = noisy(&a, 0.1, 4);
    let got = ms_ssim(&a, &b, &MsSsimParams::with_scales(1).unwrap()).unwrap();
    assert!((got - ssim_direct(&a, &b)).abs() < 1e-6);
}

#[test]
fn default_five_scales_need_176_pixels() {
    let p = MsSsimParams::default();
    assert_eq!(p.min_side(), 176);
    let x = random_image(176, 176, 0);
    assert!((ms_ssim(&x, &x, &p).unwrap() - 1.0).abs() < 1e-6);
    let err = ms_ssim(&random_image(160, 176, 0), &random_image(160, 176, 1), &p).unwrap_err();
    assert!(err.to_string().contains("176"), "{err}");
}

#[test]
fn detector_stays_frozen_through_backward() {
    let net = MiniRegionNet::new(4, 2, DType::F32).unwrap().freeze();
    let before = net.parameter_snapshot().unwrap();
    let dev = Device::Cpu;
    let pred = candle_core::Var::from_tensor(&random_image(16, 16, 5).to_tensor(DType::F32, &dev).unwrap()).unwrap();
    let target = random_image(16, 16, 6).to_tensor(DType::F32, &dev).unwrap();
    let (loss, _) = total_loss_t(
        pred.as_tensor(),
        &target,
        &net,
        &LossWeights::default(),
        &MsSsimParams::with_scales(1).unwrap(),
        &LossToggles::default(),
    )
    .unwrap();
    let grads = loss.backward().unwrap();
    assert!(grads.get(pred.as_tensor()).is_some());
    for (_, v) in net.params.vars() {
        assert!(grads.get(v.as_tensor()).is_none(), "frozen weights must not be on the tape");
    }
    assert_eq!(net.parameter_snapshot().unwrap(), before);
}

#[test]
fn text_loss_gradient_flows_through_a_network_detector() {
    let net = MiniRegionNet::new(3, 8, DType::F64).unwrap().freeze();
    let target = to_f64_tensor(&random_image(8, 8, 9));
    let x: Vec<f64> = random_image(8, 8, 10).data().iter().map(|&v| v as f64).collect();
    let (rel, _) = gradient_check(&x, (1, 3, 8, 8), |p| text_detection_loss_t(p, &target, &net), 1e-6);
    assert!(rel < 1e-3, "relative error {rel}");
}

#[test]
fn disabled_terms_are_zero_in_the_breakdown() {
    let a = random_image(32, 32, 1);
    let b = random_image(32, 32, 2);
    let p = MsSsimParams::with_scales(2).unwrap();
    let w = LossWeights::default();
    for (ms, text) in [(false, false), (true, false), (false, true), (true, true)] {
        let t = LossToggles { ms_ssim: ms, text };
        let br = total_loss(&a, &b, &LumaPoolProvider, &w, &p, &t).unwrap();
        assert_eq!(br.ms_ssim == 0.0, !ms);
        assert_eq!(br.text == 0.0, !text);
        assert!(br.l1 > 0.0);
    }
}

#[test]
fn negative_weight_is_an_argument_error() {
    let a = random_image(16, 16, 1);
    let w = LossWeights { text: -0.1, ..Default::default() };
    let r = total_loss(&a, &a, &LumaPoolProvider, &w, &MsSsimParams::with_scales(1).unwrap(), &LossToggles::default());
    assert!(matches!(r, Err(lowlight_text::Error::Argument(_))));
}

#[test]
fn shape_mismatch_is_a_shape_error() {
    let r = l1_loss(&random_image(8, 8, 0), &random_image(8, 10, 0));
    assert!(matches!(r, Err(lowlight_text::Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn l1_matches_brute_force(h in 1usize..12, w in 1usize..12, s in any::<u64>()) {
        let (a, b) = (random_image(h, w, s), random_image(h, w, s ^ 1));
        prop_assert!((l1_loss(&a, &b).unwrap() - brute_l1(&a, &b)).abs() < 1e-7);
        prop_assert_eq!(l1_loss(&a, &b).unwrap(), l1_loss(&b, &a).unwrap());
    }

    #[test]
    fn stub_text_loss_matches_brute_force(hh in 1usize..8, hw in 1usize..8, s in any::<u64>()) {
        let (a, b) = (random_image(2 * hh, 2 * hw, s), random_image(2 * hh, 2 * hw, s ^ 2));
        let got = text_detection_loss(&a, &b, &LumaPoolProvider).unwrap();
        prop_assert!((got - brute_stub_text_loss(&a, &b)).abs() < 1e-7);
    }

    #[test]
    fn ms_ssim_is_symmetric_and_bounded(s in any::<u64>()) {
        let p = MsSsimParams::with_scales(2).unwrap();
        let (a, b) = (random_image(24, 24, s), random_image(24, 24, s ^ 3));
        let ab = ms_ssim(&a, &b, &p).unwrap();
        prop_assert!((ab - ms_ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ms_ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_scale_matches_direct_ssim(h in 11usize..16, w in 11usize..16, s in any::<u64>()) {
        let (a, b) = (random_image(h, w, s), random_image(h, w, s ^ 4));
        let got = ms_ssim(&a, &b, &MsSsimParams::with_scales(1).unwrap()).unwrap();
        prop_assert!((got - ssim_direct(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn breakdown_recombines(s in any::<u64>(), w1 in 0.0f64..2.0, w2 in 0.0f64..2.0, w3 in 0.0f64..2.0) {
        let (a, b) = (random_image(24, 24, s), random_image(24, 24, s ^ 5));
        let w = LossWeights { l1: w1, ms_ssim: w2, text: w3 };
        let p = MsSsimParams::with_scales(2).unwrap();
        let dev = Device::Cpu;
        let (total, br) = total_loss_t(
            &a.to_tensor(DType::F64, &dev).unwrap(),
            &b.to_tensor(DType::F64, &dev).unwrap(),
            &LumaPoolProvider,
            &w,
            &p,
            &LossToggles::default(),
        ).unwrap();
        let t = total.to_scalar::<f64>().unwrap();
        prop_assert!((br.weighted_l1 + br.weighted_ms_ssim + br.weighted_text - br.total).abs() < 1e-9);
        prop_assert!((t - br.total).abs() < 1e-9);
        prop_assert!((br.weighted_l1 - w1 * br.l1).abs() < 1e-12);
        prop_assert!(br.l1 >= 0.0 && br.ms_ssim >= 0.0 && br.text >= 0.0);
    }

    #[test]
    fn identical_inputs_cost_nothing(s in any::<u64>()) {
        let a = random_image(32, 32, s);
        let br = total_loss(&a, &a, &LumaPoolProvider, &LossWeights::default(), &MsSsimParams::with_scales(2).unwrap(), &LossToggles::default()).unwrap();
        prop_assert_eq!(br.l1, 0.0);
        prop_assert_eq!(br.text, 0.0);
        prop_assert!(br.ms_ssim.abs() < 1e-6);
    }
}
