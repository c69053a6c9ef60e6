mod common;

use std::fs;
use std::path::Path;

use common::random_image;
use lowlight_text::archive::Archive;
use lowlight_text::data::{darken, synthetic_text_scene, DarkenParams, DarkenSampler};
use lowlight_text::domain::{save_image, write_annotations};
use lowlight_text::enhancer::default_schedule;
use lowlight_text::pipeline::{
    darken_command, enhance_command, evaluate_command, pretrain_edge_estimator, train_command, ComponentToggles,
    EvaluateOptions, StepRecord, CHECKPOINT_VERSION, PSNR_CAP,
};
use lowlight_text::texteval::{LumaPoolProvider, MiniRegionNet, RegionScoreProvider};
use lowlight_text::{Checkpoint, Error, ImageTensor, MsSsimParams, PairedSample, TrainConfig, Trainer};

fn small_config() -> TrainConfig {
    let mut c = TrainConfig {
        epochs: 10,
        learning_rate: 1e-3,
        decayed_learning_rate: 1e-4,
        decay_epoch: 5,
        crop: 32,
        ms_ssim: MsSsimParams::with_scales(2).unwrap(),
        enhancer: default_schedule().scaled_down(8),
        seed: 3,
        ..TrainConfig::default()
    };
    c.toggles.edge = false;
    c.edge.steps = 5;
    c.edge.crop = Some(32);
    c.region_net.width = 4;
    c.region_net.steps = 5;
    c
}

fn scene(id: &str, seed: u64, h: usize, w: usize) -> PairedSample {
    let (gt, boxes) = synthetic_text_scene(h, w, seed);
    let low = darken(&gt, &DarkenParams { exposure_scale: 0.05, read_noise_sigma: 0.0, gamma: 2.2, seed });
    PairedSample::new(id, low, gt, boxes).unwrap()
}

#[test]
fn single_sample_descends() {
    let c = TrainConfig { epochs: 50, decay_epoch: 50, augment: false, ..small_config() };
    let mut t = Trainer::new(c, vec![scene("a", 1, 32, 32)], &LumaPoolProvider, None).unwrap();
    let log = t.run_steps(50).unwrap();
    let increases = log.windows(2).filter(|w| w[1].loss.total > w[0].loss.total).count();
    assert!(increases < 50);
    assert!(log[49].loss.total < log[0].loss.total);
}

#[test]
fn l1_only_total_is_the_weighted_l1_term() {
    let mut c = small_config();
    c.toggles = ComponentToggles { attention: false, edge: false, ms_ssim: false, text: false };
    let mut t = Trainer::new(c, vec![scene("a", 2, 48, 48)], &LumaPoolProvider, None).unwrap();
    for r in t.run_steps(5).unwrap() {
        assert!((r.loss.total - 0.85 * r.loss.l1).abs() < 1e-9);
        assert_eq!((r.loss.ms_ssim, r.loss.text), (0.0, 0.0));
    }
}

#[test]
fn disabling_a_term_zeroes_only_that_term() {
    for (ms, text) in [(true, false), (false, true)] {
        let mut c = small_config();
        c.toggles.ms_ssim = ms;
        c.toggles.text = text;
        let mut t = Trainer::new(c, vec![scene("a", 2, 32, 32)], &LumaPoolProvider, None).unwrap();
        for r in t.run_steps(3).unwrap() {
            assert_eq!(r.loss.ms_ssim > 0.0, ms);
            assert_eq!(r.loss.text > 0.0, text);
            assert!(r.loss.l1 > 0.0);
        }
    }
}

#[test]
fn learning_rate_steps_down_at_the_decay_epoch() {
    let c = TrainConfig { epochs: 4, decay_epoch: 2, learning_rate: 1e-4, decayed_learning_rate: 1e-5, ..small_config() };
    let samples = vec![scene("a", 1, 32, 32), scene("b", 2, 32, 32)];
    let mut t = Trainer::new(c, samples, &LumaPoolProvider, None).unwrap();
    t.run(None).unwrap();
    let log = t.log();
    assert_eq!(log.len(), 8);
    for r in log {
        let expected = if r.epoch < 2 { 1e-4 } else { 1e-5 };
        assert_eq!(r.learning_rate, expected, "step {}", r.step);
        assert_eq!(r.epoch, r.step / 2);
    }
    // every epoch visits every sample once
    for e in 0..4 {
        let mut ids: Vec<_> = log.iter().filter(|r| r.epoch == e).flat_map(|r| r.sample_ids.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["a", "b"]);
    }
}

#[test]
fn frozen_helpers_stay_frozen() {
    let mut c = small_config();
    c.toggles.edge = true;
    let samples = vec![scene("a", 1, 32, 32)];
    let detector = MiniRegionNet::new(4, 0, candle_core::DType::F32).unwrap().freeze();
    let edge = pretrain_edge_estimator(&samples, &c).unwrap();
    let edge_before = edge.net.params.snapshot().unwrap();
    let det_before = detector.parameter_snapshot().unwrap();
    let mut t = Trainer::new(c, samples, &detector, Some(edge)).unwrap();
    t.run_steps(3).unwrap();
    assert_eq!(detector.parameter_snapshot().unwrap(), det_before);
    assert_eq!(t.edge_estimator().unwrap().net.params.snapshot().unwrap(), edge_before);
}

#[test]
fn non_finite_input_aborts_with_the_sample_id() {
    let mut s = scene("poisoned", 1, 32, 32);
    s.low.data_mut()[5] = f32::NAN;
    let mut t = Trainer::new(small_config(), vec![s], &LumaPoolProvider, None).unwrap();
    match t.step() {
        Err(Error::NonFinite { sample_id, step, .. }) => {
            assert_eq!(sample_id, "poisoned");
            assert_eq!(step, 0);
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.toggles.edge = true;
    let samples = vec![scene("a", 1, 32, 32)];
    let edge = pretrain_edge_estimator(&samples, &c).unwrap();
    let mut t = Trainer::new(c, samples, &LumaPoolProvider, Some(edge)).unwrap();
    t.run_steps(2).unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    t.save_checkpoint(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    assert_eq!(loaded.step, 2);
    loaded.save(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn newer_checkpoint_versions_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::new(small_config(), vec![scene("a", 1, 32, 32)], &LumaPoolProvider, None).unwrap();
    let mut a = t.checkpoint().to_archive().unwrap();
    a.meta["version"] = serde_json::json!(CHECKPOINT_VERSION + 1);
    let path = dir.path().join("future.ckpt");
    a.save(&path).unwrap();
    assert!(matches!(
        Checkpoint::load(&path),
        Err(Error::Version { found, expected }) if found == CHECKPOINT_VERSION + 1 && expected == CHECKPOINT_VERSION
    ));
    // a foreign archive is not a checkpoint at all
    Archive::new(serde_json::json!({"kind": "something_else"})).save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Validation(_))));
}

fn write_checkpoint(dir: &Path) -> std::path::PathBuf {
    let t = Trainer::new(small_config(), vec![scene("a", 1, 32, 32)], &LumaPoolProvider, None).unwrap();
    let p = dir.join("model.ckpt");
    t.save_checkpoint(&p).unwrap();
    p
}

#[test]
fn enhance_is_deterministic_and_keeps_size() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path());
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    save_image(&random_image(100, 100, 1).map(|v| v * 0.1), input.join("odd.png")).unwrap();
    save_image(&random_image(40, 72, 2).map(|v| v * 0.1), input.join("wide.png")).unwrap();

    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    let written = enhance_command(&input, &ckpt, &o1, true).unwrap();
    enhance_command(&input, &ckpt, &o2, false).unwrap();
    assert_eq!(written.len(), 2);
    for name in ["odd.png", "wide.png"] {
        assert_eq!(fs::read(o1.join(name)).unwrap(), fs::read(o2.join(name)).unwrap());
    }
    let out = lowlight_text::domain::load_image(o1.join("odd.png")).unwrap();
    assert_eq!((out.height(), out.width()), (100, 100));
    let att = lowlight_text::domain::load_image(o1.join("attention/wide.png")).unwrap();
    assert_eq!((att.height(), att.width()), (40, 72));
    assert!(!o2.join("attention").exists());
}

#[test]
fn enhance_on_an_empty_directory_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_checkpoint(dir.path());
    let input = dir.path().join("empty");
    fs::create_dir(&input).unwrap();
    let out = dir.path().join("out");
    assert!(enhance_command(&input, &ckpt, &out, false).unwrap().is_empty());
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

fn image_dirs(pred: &[(&str, ImageTensor)], gt: &[(&str, ImageTensor)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (sub, list) in [("pred", pred), ("gt", gt)] {
        fs::create_dir(dir.path().join(sub)).unwrap();
        for (name, img) in list {
            save_image(img, dir.path().join(sub).join(format!("{name}.png"))).unwrap();
        }
    }
    dir
}

#[test]
fn evaluate_identical_images() {
    let img = random_image(32, 32, 1);
    let dir = image_dirs(&[("x", img.clone())], &[("x", img)]);
    let r = evaluate_command(&EvaluateOptions::new(dir.path().join("pred"), dir.path().join("gt"))).unwrap();
    assert_eq!(r.psnr, Some(PSNR_CAP));
    assert!((r.ssim.unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(r.images, 1);
    // no annotations: detection fields absent from the JSON
    let json = serde_json::to_value(&r).unwrap();
    for k in ["precision", "recall", "hmean", "accuracy"] {
        assert!(json.get(k).is_none(), "{k} should be omitted");
    }
}

#[test]
fn evaluate_uniform_offset_is_twenty_db() {
    // PNG stores 8 bits, so the on-disk offset is 51/255 (0.2); the 0.1 case
    // is checked in memory below
    let gt = ImageTensor::from_fn(32, 32, |c, y, x| ((40 + c * 7 + y + x) as f32) / 255.0);
    let pred = gt.map(|v| v + 51.0 / 255.0);
    let dir = image_dirs(&[("x", pred)], &[("x", gt)]);
    let r = evaluate_command(&EvaluateOptions::new(dir.path().join("pred"), dir.path().join("gt"))).unwrap();
    let expected = 10.0 * (1.0 / (51.0f64 / 255.0).powi(2)).log10();
    assert!((r.psnr.unwrap() - expected).abs() < 1e-4, "{:?} vs {expected}", r.psnr);

    // the in-memory metric hits 20 dB exactly for a 0.1 offset
    let a = ImageTensor::filled(8, 8, 0.3);
    let b = ImageTensor::filled(8, 8, 0.4);
    let p = lowlight_text::pipeline::psnr(&b, &a).unwrap();
    assert!((p - 20.0).abs() < 1e-5, "{p}");
}

#[test]
fn evaluate_reports_orphans() {
    let img = random_image(16, 16, 1);
    let dir = image_dirs(&[("a", img.clone()), ("b", img.clone())], &[("a", img.clone()), ("c", img)]);
    let err = evaluate_command(&EvaluateOptions::new(dir.path().join("pred"), dir.path().join("gt"))).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Validation(_)));
    assert!(msg.contains("b") && msg.contains("c"), "{msg}");
}

#[test]
fn evaluate_with_annotations_scores_detection() {
    let (gt, boxes) = synthetic_text_scene(64, 96, 4);
    let dir = image_dirs(&[("s", gt.clone())], &[("s", gt)]);
    let ann = dir.path().join("ann");
    fs::create_dir(&ann).unwrap();
    write_annotations(&boxes, ann.join("s.txt")).unwrap();
    // precomputed detections equal to the ground truth
    let det = dir.path().join("det");
    fs::create_dir(&det).unwrap();
    write_annotations(&boxes, det.join("res_s.txt")).unwrap();
    let mut opts = EvaluateOptions::new(dir.path().join("pred"), dir.path().join("gt"));
    opts.ann_dir = Some(ann);
    opts.det_dir = Some(det);
    let r = evaluate_command(&opts).unwrap();
    assert_eq!((r.precision, r.recall, r.hmean), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(r.accuracy, None);
}

#[test]
fn darken_then_train_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let bright = dir.path().join("bright");
    fs::create_dir(&bright).unwrap();
    for (i, name) in ["one", "two"].iter().enumerate() {
        let (gt, boxes) = synthetic_text_scene(48, 48, i as u64);
        save_image(&gt, bright.join(format!("{name}.png"))).unwrap();
        write_annotations(&boxes, bright.join(format!("gt_{name}.txt"))).unwrap();
    }
    let data = dir.path().join("data");
    let manifest = darken_command(&bright, &data, &DarkenSampler { seed: 9, ..Default::default() }).unwrap();
    assert_eq!(manifest.entries.len(), 2);
    assert!(manifest.entries.iter().all(|e| e.annotations.is_some() && e.darken.is_some()));
    let again = lowlight_text::data::DatasetManifest::load(data.join("manifest.json")).unwrap();
    assert_eq!(again.entries, manifest.entries);

    let config = TrainConfig { epochs: 2, checkpoint_interval: 1, ..small_config() };
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string(&config).unwrap()).unwrap();
    let runs = dir.path().join("runs");
    let outcome = train_command(&cfg_path, &data.join("manifest.json"), None, &runs).unwrap();
    assert_eq!(outcome.log.len(), 4);
    assert!(runs.join("epoch00001.ckpt").is_file() && runs.join("epoch00002.ckpt").is_file());
    let lines: Vec<StepRecord> = fs::read_to_string(runs.join("log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), outcome.log.len());
    for (read, kept) in lines.iter().zip(&outcome.log) {
        assert_eq!((read.step, read.epoch, &read.sample_ids), (kept.step, kept.epoch, &kept.sample_ids));
        assert_eq!(read.learning_rate, kept.learning_rate);
        assert!((read.loss.total - kept.loss.total).abs() <= 1e-15 * kept.loss.total.abs().max(1.0));
    }
    let ckpt = Checkpoint::load(&outcome.checkpoint).unwrap();
    assert_eq!((ckpt.step, ckpt.epoch()), (4, 2));
    assert_eq!(ckpt.config, config);
}

/// Returns the ideal region-score map of fixed boxes, whatever the input.
struct OracleRegions(lowlight_text::GrayMap);

impl RegionScoreProvider for OracleRegions {
    fn name(&self) -> &str {
        "oracle"
    }

    fn region_score(&self, images: &candle_core::Tensor) -> lowlight_text::Result<candle_core::Tensor> {
        Ok(self.0.to_tensor(images.dtype(), images.device())?)
    }
}

#[test]
fn detect_on_keeps_boxes_inside_the_image() {
    let (img, boxes) = synthetic_text_scene(96, 128, 100);
    let oracle = OracleRegions(lowlight_text::texteval::synth_region_target(&boxes, 128, 96));
    let found = lowlight_text::pipeline::detect_on(&img, &oracle, &Default::default()).unwrap();
    assert_eq!(found.len(), boxes.len());
    let m = lowlight_text::texteval::match_detections(&found, &boxes, 0.5);
    assert_eq!(m.pairs.len(), boxes.len());
    for b in &found {
        let (x0, y0, x1, y1) = b.bounds();
        assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= 128.0 && y1 <= 96.0);
    }
}
