//! Training loop, checkpoints, and the file-level commands behind the CLI:
//! train, enhance, darken and evaluate.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::attention::{attention_pyramid, AttentionMap};
use crate::data::{augment_pair, darken, random_crop_pair, DarkenSampler, DatasetManifest, ManifestEntry};
use crate::domain::{load_image, parse_annotations, save_image, GrayMap, ImageTensor, PairedSample, Source, TextBox};
use crate::edge::{estimate_edges, train_edge_estimator, EdgeEstimatorConfig, EdgeEstimatorParams, EdgeTrainConfig, SobelTeacher};
use crate::enhancer::{default_schedule, enhance, EnhancerParams, Skips, UNetSchedule};
use crate::error::{Error, Result};
use crate::losses::{ms_ssim, total_loss_t, LossBreakdown, LossToggles, LossWeights, MsSsimParams};
use crate::nn::{Adam, AdamConfig};
use crate::texteval::{
    detect_text, load_provider, match_detections, spotting_counts, train_region_net, DetectConfig,
    DetectionCounts, LumaPoolProvider, RegionNetTrainConfig, RegionScoreProvider, SpottingCounts,
    WordRecognizer,
};

pub const CHECKPOINT_KIND: &str = "lowlight_checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SEED_ENV: &str = "LOWLIGHT_SEED";
pub const OUTPUT_ENV: &str = "LOWLIGHT_OUTPUT";

/// Which parts of the method are active; each can be ablated independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentToggles {
    /// Gate skips with the luminance attention map.
    pub attention: bool,
    /// Feed the estimated edge map (zeros otherwise).
    pub edge: bool,
    pub ms_ssim: bool,
    pub text: bool,
}

impl Default for ComponentToggles {
    fn default() -> Self {
        Self {
            attention: true,
            edge: true,
            ms_ssim: true,
            text: true,
        }
    }
}

impl ComponentToggles {
    pub fn losses(&self) -> LossToggles {
        LossToggles {
            ms_ssim: self.ms_ssim,
            text: self.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub decayed_learning_rate: f64,
    /// First epoch (0-based) trained at the decayed rate.
    pub decay_epoch: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub crop: usize,
    pub augment: bool,
    pub weights: LossWeights,
    pub ms_ssim: MsSsimParams,
    pub toggles: ComponentToggles,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub split: String,
    pub enhancer: UNetSchedule,
    pub edge: EdgeTrainConfig,
    /// Used when no detector weights are supplied and the data has boxes.
    pub region_net: RegionNetTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4000,
            learning_rate: 1e-4,
            decayed_learning_rate: 1e-5,
            decay_epoch: 2000,
            adam: AdamConfig::default(),
            batch_size: 1,
            crop: 512,
            augment: true,
            weights: LossWeights::default(),
            ms_ssim: MsSsimParams::default(),
            toggles: ComponentToggles::default(),
            seed: 0,
            checkpoint_interval: 500,
            max_steps: None,
            split: "train".into(),
            enhancer: default_schedule(),
            edge: EdgeTrainConfig::default(),
            region_net: RegionNetTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.decayed_learning_rate > 0.0) {
            return Err(Error::Argument("learning rates must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument("epochs and batch size must be >= 1".into()));
        }
        let factor = 1 << EnhancerParams::DEPTH;
        if self.crop == 0 || self.crop % factor != 0 {
            return Err(Error::Argument(format!("crop must be a positive multiple of {factor}")));
        }
        self.weights.validate()?;
        if self.toggles.ms_ssim {
            self.ms_ssim.validate()?;
            if self.crop < self.ms_ssim.min_side() {
                return Err(Error::Argument(format!(
                    "crop {} is too small for {}-scale MS-SSIM (needs {})",
                    self.crop,
                    self.ms_ssim.scales(),
                    self.ms_ssim.min_side()
                )));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.learning_rate
        } else {
            self.decayed_learning_rate
        }
    }

    /// Applies `LOWLIGHT_SEED` when set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("{SEED_ENV}={v:?} is not an integer")))?;
        }
        Ok(())
    }
}

/// `LOWLIGHT_OUTPUT` when set, else `default`.
pub fn output_root(default: impl Into<PathBuf>) -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| default.into())
}

/// One optimizer step as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    pub sample_ids: Vec<String>,
    pub loss: LossBreakdown,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Optimizer steps completed.
    pub step: usize,
    /// Batches per pass over the training split.
    pub steps_per_epoch: usize,
    pub enhancer: EnhancerParams,
    pub edge: Option<EdgeEstimatorParams>,
    pub adam: Adam,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    version: u32,
    step: usize,
    epoch: usize,
    steps_per_epoch: usize,
    config: TrainConfig,
    adam_step: u64,
    edge: Option<EdgeEstimatorConfig>,
    /// Shuffles and crops are drawn from ChaCha8 streams keyed by this seed
    /// and the epoch / step counters, so this plus `step` is the full state.
    rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    algorithm: String,
    seed: u64,
}

impl Checkpoint {
    pub fn epoch(&self) -> usize {
        self.step / self.steps_per_epoch.max(1)
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            version: CHECKPOINT_VERSION,
            step: self.step,
            epoch: self.epoch(),
            steps_per_epoch: self.steps_per_epoch,
            config: self.config.clone(),
            adam_step: self.adam.step_count(),
            edge: self.edge.as_ref().map(|e| e.config.clone()),
            rng: RngState {
                algorithm: "chacha8".into(),
                seed: self.config.seed,
            },
        };
        let mut a = Archive::new(serde_json::to_value(meta)?);
        self.enhancer.params().write_into(&mut a, "enhancer.")?;
        if let Some(e) = &self.edge {
            e.write_into(&mut a, "edge.")?;
        }
        self.adam.write_into(&mut a, "adam.")?;
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let kind = a.meta.get("kind").and_then(|k| k.as_str());
        if kind != Some(CHECKPOINT_KIND) {
            return Err(Error::Validation(format!("not a training checkpoint (kind {kind:?})")));
        }
        let version = a.meta.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta: CheckpointMeta = serde_json::from_value(a.meta.clone())?;
        let enhancer = EnhancerParams::new(meta.config.enhancer.clone(), 0, DType::F32)?;
        enhancer.params().read_from(a, "enhancer.")?;
        let edge = match meta.edge {
            Some(cfg) => {
                let e = EdgeEstimatorParams::new(cfg, 0, DType::F32)?;
                e.net.params.read_from(a, "edge.")?;
                Some(e.freeze())
            }
            None => None,
        };
        let adam = Adam::read_from(meta.config.adam, meta.adam_step, a, "adam.", DType::F32)?;
        Ok(Self {
            config: meta.config,
            step: meta.step,
            steps_per_epoch: meta.steps_per_epoch,
            enhancer,
            edge,
            adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

fn steps_per_epoch(samples: usize, batch: usize) -> usize {
    samples.div_ceil(batch).max(1)
}

const EPOCH_STREAM_SALT: u64 = 0x0e90_c4a1_5f1e_d00d;

/// Drives the enhancer's optimization; the detector and edge estimator stay frozen.
pub struct Trainer<'a> {
    config: TrainConfig,
    samples: Vec<PairedSample>,
    detector: &'a dyn RegionScoreProvider,
    edge: Option<EdgeEstimatorParams>,
    enhancer: EnhancerParams,
    adam: Adam,
    step: usize,
    log: Vec<StepRecord>,
}

impl<'a> Trainer<'a> {
    /// Fresh run. An edge estimator is required when the edge toggle is on.
    pub fn new(
        config: TrainConfig,
        samples: Vec<PairedSample>,
        detector: &'a dyn RegionScoreProvider,
        edge: Option<EdgeEstimatorParams>,
    ) -> Result<Self> {
        config.validate()?;
        let enhancer = EnhancerParams::new(config.enhancer.clone(), config.seed, DType::F32)?;
        let adam = Adam::new(config.adam);
        Self::assemble(config, samples, detector, edge, enhancer, adam, 0)
    }

    pub fn resume(
        checkpoint: Checkpoint,
        samples: Vec<PairedSample>,
        detector: &'a dyn RegionScoreProvider,
    ) -> Result<Self> {
        let Checkpoint {
            config,
            step,
            enhancer,
            edge,
            adam,
            ..
        } = checkpoint;
        config.validate()?;
        Self::assemble(config, samples, detector, edge, enhancer, adam, step)
    }

    fn assemble(
        config: TrainConfig,
        samples: Vec<PairedSample>,
        detector: &'a dyn RegionScoreProvider,
        edge: Option<EdgeEstimatorParams>,
        enhancer: EnhancerParams,
        adam: Adam,
        step: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("training needs at least one sample".into()));
        }
        if config.toggles.edge && edge.is_none() {
            return Err(Error::Argument("edge toggle is on but no edge estimator was supplied".into()));
        }
        Ok(Self {
            config,
            samples,
            detector,
            edge: edge.map(EdgeEstimatorParams::freeze),
            enhancer,
            adam,
            step,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn enhancer(&self) -> &EnhancerParams {
        &self.enhancer
    }

    pub fn edge_estimator(&self) -> Option<&EdgeEstimatorParams> {
        self.edge.as_ref()
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        steps_per_epoch(self.samples.len(), self.config.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let full = self.config.epochs * self.steps_per_epoch();
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            steps_per_epoch: self.steps_per_epoch(),
            enhancer: self.enhancer.clone(),
            edge: self.edge.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ EPOCH_STREAM_SALT);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step as u64);
        rng
    }

    /// The cropped and augmented samples used at `step`.
    pub fn batch_for_step(&self, step: usize) -> Result<Vec<PairedSample>> {
        let spe = self.steps_per_epoch();
        let (epoch, within) = (step / spe, step % spe);
        let order = self.epoch_order(epoch);
        let b = self.config.batch_size;
        let picks = &order[within * b..((within + 1) * b).min(order.len())];
        let mut rng = self.step_rng(step);
        picks
            .iter()
            .map(|&i| {
                let c = random_crop_pair(&self.samples[i], self.config.crop, &mut rng);
                if self.config.augment {
                    augment_pair(&c, &mut rng)
                } else {
                    Ok(c)
                }
            })
            .collect()
    }

    /// Forward pass and loss for a prepared batch.
    pub fn loss_on(&self, batch: &[PairedSample]) -> Result<(Tensor, LossBreakdown)> {
        let dev = Device::Cpu;
        let stack = |f: &dyn Fn(&PairedSample) -> Result<Tensor>| -> Result<Tensor> {
            let parts = batch.iter().map(f).collect::<Result<Vec<_>>>()?;
            Ok(Tensor::cat(&parts, 0)?)
        };
        let low = stack(&|s| s.low.to_tensor(DType::F32, &dev))?;
        let gt = stack(&|s| s.gt.to_tensor(DType::F32, &dev))?;
        let edges = match (&self.edge, self.config.toggles.edge) {
            (Some(e), true) => e.forward(&low)?.detach(),
            _ => {
                let (n, _, h, w) = low.dims4()?;
                Tensor::zeros((n, 1, h, w), DType::F32, &dev)?
            }
        };
        let pred = if self.config.toggles.attention {
            let maps = batch
                .iter()
                .map(|s| attention_pyramid(&s.low, EnhancerParams::DEPTH)?.to_tensors(DType::F32, &dev))
                .collect::<Result<Vec<_>>>()?;
            let gates = (0..=EnhancerParams::DEPTH)
                .map(|k| Tensor::cat(&maps.iter().map(|m| &m[k]).collect::<Vec<_>>(), 0))
                .collect::<candle_core::Result<Vec<_>>>()?;
            self.enhancer.forward(&low, &edges, Skips::Gated(&gates))?
        } else {
            self.enhancer.forward(&low, &edges, Skips::Plain)?
        };
        total_loss_t(
            &pred,
            &gt,
            self.detector,
            &self.config.weights,
            &self.config.ms_ssim,
            &self.config.toggles.losses(),
        )
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let epoch = step / self.steps_per_epoch();
        let lr = self.config.learning_rate_at(epoch);
        let batch = self.batch_for_step(step)?;
        let ids: Vec<String> = batch.iter().map(|s| s.id.clone()).collect();
        let (loss, breakdown) = self.loss_on(&batch)?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite {
                step,
                sample_id: ids.join(","),
                detail: format!("{breakdown:?}"),
            });
        }
        let grads = loss.backward()?;
        self.adam.step(self.enhancer.params(), &grads, lr)?;
        self.step += 1;
        let rec = StepRecord {
            step,
            epoch,
            learning_rate: lr,
            sample_ids: ids,
            loss: breakdown,
        };
        self.log.push(rec.clone());
        Ok(rec)
    }

    pub fn run_steps(&mut self, n: usize) -> Result<Vec<StepRecord>> {
        (0..n).map(|_| self.step()).collect()
    }

    /// Trains to completion, writing periodic checkpoints into `out` if given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        let spe = self.steps_per_epoch();
        while !self.is_finished() {
            let rec = self.step()?;
            if rec.step % 100 == 0 {
                info!(
                    "step {} epoch {} lr {:.1e}: total {:.5} (l1 {:.5}, ms-ssim {:.5}, text {:.5})",
                    rec.step,
                    rec.epoch,
                    rec.learning_rate,
                    rec.loss.total,
                    rec.loss.l1,
                    rec.loss.ms_ssim,
                    rec.loss.text
                );
            }
            let epoch_done = self.step % spe == 0;
            let interval = self.config.checkpoint_interval;
            if let (Some(dir), true, true) = (out, epoch_done, interval > 0) {
                let epoch = self.step / spe;
                if epoch % interval == 0 {
                    self.save_checkpoint(dir.join(format!("epoch{epoch:05}.ckpt")))?;
                }
            }
        }
        Ok(())
    }
}

/// Edge estimator per the config, trained with the Sobel teacher on `samples`.
pub fn pretrain_edge_estimator(samples: &[PairedSample], config: &TrainConfig) -> Result<EdgeEstimatorParams> {
    let outcome = train_edge_estimator(samples, &config.edge, &SobelTeacher)?;
    if let Some(last) = outcome.loss_history.last() {
        info!("edge estimator trained: final mae {last:.5}");
    }
    Ok(outcome.params.freeze())
}

/// Detector from a weights file, else a mini region net trained on the
/// annotated ground truths (written to `save_to` if given), else the luma stub.
pub fn resolve_detector(
    weights: Option<&Path>,
    samples: &[PairedSample],
    config: &RegionNetTrainConfig,
    save_to: Option<&Path>,
) -> Result<Box<dyn RegionScoreProvider>> {
    if let Some(p) = weights {
        return load_provider(p);
    }
    let annotated: Vec<(ImageTensor, Vec<TextBox>)> = samples
        .iter()
        .filter(|s| s.boxes.iter().any(|b| b.care))
        .map(|s| {
            let (h, w) = (s.gt.height() / 2 * 2, s.gt.width() / 2 * 2);
            Ok((s.gt.crop(0, 0, w, h)?, s.boxes.clone()))
        })
        .collect::<Result<_>>()?;
    if annotated.is_empty() {
        warn!("no detector weights and no annotated samples; using the luma stub detector");
        return Ok(Box::new(LumaPoolProvider));
    }
    let (net, history) = train_region_net(&annotated, config)?;
    if let Some(last) = history.last() {
        info!("mini region net trained on {} images: final bce {last:.5}", annotated.len());
    }
    if let Some(p) = save_to {
        net.save(p)?;
        info!("region net saved to {}", p.display());
    }
    Ok(Box::new(net))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: Vec<StepRecord>,
}

/// `train`: loads config and manifest, prepares the frozen helpers, trains,
/// and writes `final.ckpt`, `log.jsonl` and (when it had to train one)
/// the region net `detector.arc` into `out`.
pub fn train_command(
    config_path: &Path,
    manifest_path: &Path,
    detector_weights: Option<&Path>,
    out: &Path,
) -> Result<TrainOutcome> {
    let mut config = TrainConfig::load(config_path)?;
    config.apply_env_overrides()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let samples = crate::data::load_dataset(&manifest, &config.split)?;
    if samples.is_empty() {
        return Err(Error::Argument(format!("split {:?} of the manifest is empty", config.split)));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let detector = resolve_detector(detector_weights, &samples, &config.region_net, Some(&out.join("detector.arc")))?;
    let edge = if config.toggles.edge {
        Some(pretrain_edge_estimator(&samples, &config)?)
    } else {
        None
    };
    let before = detector.parameter_snapshot()?;
    let mut trainer = Trainer::new(config, samples, detector.as_ref(), edge)?;
    trainer.run(Some(out))?;
    if detector.parameter_snapshot()? != before {
        return Err(Error::Contract("detector weights changed during training".into()));
    }
    let ckpt = out.join("final.ckpt");
    trainer.save_checkpoint(&ckpt)?;
    write_log(trainer.log(), &out.join("log.jsonl"))?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log: trainer.log().to_vec(),
    })
}

pub fn write_log(log: &[StepRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in log {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Image files (png / jpg / jpeg) of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Inference for one image of any size: reflect-pad to a multiple of 16,
/// enhance, crop back.
pub fn enhance_image(
    low: &ImageTensor,
    enhancer: &EnhancerParams,
    edge: Option<&EdgeEstimatorParams>,
    toggles: &ComponentToggles,
) -> Result<(ImageTensor, AttentionMap)> {
    let factor = 1 << EnhancerParams::DEPTH;
    let (h, w) = (low.height(), low.width());
    let padded = low.pad_reflect(h.div_ceil(factor) * factor, w.div_ceil(factor) * factor);
    let (ph, pw) = (padded.height(), padded.width());
    let attention = if toggles.attention {
        attention_pyramid(&padded, EnhancerParams::DEPTH)?
    } else {
        AttentionMap::uniform(ph, pw, 1.0, EnhancerParams::DEPTH)?
    };
    let edges = match (edge, toggles.edge) {
        (Some(e), true) => estimate_edges(&padded, e)?,
        _ => GrayMap::filled(ph, pw, 0.0),
    };
    let out = enhance(&padded, &edges, &attention, enhancer)?;
    Ok((out.crop(0, 0, w, h)?, attention))
}

/// `enhance`: one PNG per input image, named after the input's stem. With
/// `dump_attention`, the attention map goes to `out/attention/<stem>.png`.
pub fn enhance_command(input: &Path, checkpoint: &Path, out: &Path, dump_attention: bool) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let images = list_images(input)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::with_capacity(images.len());
    for path in images {
        let low = load_image(&path)?;
        let (enhanced, attention) = enhance_image(&low, &ckpt.enhancer, ckpt.edge.as_ref(), &ckpt.config.toggles)?;
        let dst = out.join(format!("{}.png", stem(&path)));
        save_image(&enhanced, &dst)?;
        if dump_attention {
            let dir = out.join("attention");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let base = GrayMap::from_fn(low.height(), low.width(), |y, x| attention.base.get(y, x));
            save_image(&base.to_rgb(), dir.join(format!("{}.png", stem(&path))))?;
        }
        written.push(dst);
    }
    info!("enhanced {} images into {}", written.len(), out.display());
    Ok(written)
}

/// `darken`: synthesizes `low/`, copies ground truths to `gt/` and
/// annotations to `ann/`, and writes `manifest.json`.
pub fn darken_command(input: &Path, out: &Path, sampler: &DarkenSampler) -> Result<DatasetManifest> {
    let images = list_images(input)?;
    for sub in ["low", "gt", "ann"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(images.len());
    for (i, path) in images.iter().enumerate() {
        let id = stem(path);
        let gt = load_image(path)?;
        let params = sampler.params_for(i as u64);
        let low = darken(&gt, &params);
        let low_rel = PathBuf::from("low").join(format!("{id}.png"));
        let gt_rel = PathBuf::from("gt").join(format!("{id}.png"));
        save_image(&low, out.join(&low_rel))?;
        save_image(&gt, out.join(&gt_rel))?;
        let annotations = match find_annotation(input, &id) {
            Some(src) => {
                let rel = PathBuf::from("ann").join(format!("{id}.txt"));
                fs::copy(&src, out.join(&rel)).map_err(|e| Error::io(&src, e))?;
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id,
            low: low_rel,
            gt: gt_rel,
            annotations,
            split: "train".into(),
            source: Source::Synthetic,
            darken: Some(params),
        });
    }
    let manifest = DatasetManifest {
        entries,
        root: out.to_path_buf(),
    };
    manifest.save(out.join("manifest.json"))?;
    info!("darkened {} images into {}", manifest.entries.len(), out.display());
    Ok(manifest)
}

/// `<stem>.txt` or `gt_<stem>.txt` inside `dir`.
pub fn find_annotation(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.txt"), format!("gt_{stem}.txt")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// `10 log10(1 / MSE)` over all pixels and channels after clamping; capped.
pub fn psnr(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction {}x{} and target {}x{} differ",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    let n = pred.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.clamp(0.0, 1.0) as f64 - b.clamp(0.0, 1.0) as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Single-scale SSIM with the standard 11-tap Gaussian window.
pub fn ssim(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    ms_ssim(&pred.clone().clamp01(), &target.clone().clamp01(), &MsSsimParams::with_scales(1)?)
}

/// Metrics for one evaluation split. Absent parts are omitted from the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hmean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    pub images: usize,
}

impl MetricsReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

pub struct EvaluateOptions<'a> {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    /// Ground-truth annotations; detection metrics need them.
    pub ann_dir: Option<PathBuf>,
    /// Precomputed detections (`<stem>.txt` or `res_<stem>.txt`), used instead
    /// of running the detector.
    pub det_dir: Option<PathBuf>,
    /// Defaults to the luma stub when neither this nor `det_dir` is given.
    pub detector: Option<&'a dyn RegionScoreProvider>,
    pub recognizer: Option<&'a dyn WordRecognizer>,
    pub detect: DetectConfig,
    pub iou_threshold: f64,
}

impl<'a> EvaluateOptions<'a> {
    pub fn new(pred_dir: impl Into<PathBuf>, gt_dir: impl Into<PathBuf>) -> Self {
        Self {
            pred_dir: pred_dir.into(),
            gt_dir: gt_dir.into(),
            ann_dir: None,
            det_dir: None,
            detector: None,
            recognizer: None,
            detect: DetectConfig::default(),
            iou_threshold: 0.5,
        }
    }
}

/// Runs the detector on an image of any size (reflect-padded to a multiple
/// of 16) and clips the boxes back to the image.
pub fn detect_on(image: &ImageTensor, detector: &dyn RegionScoreProvider, cfg: &DetectConfig) -> Result<Vec<TextBox>> {
    let (h, w) = (image.height(), image.width());
    let padded = image.pad_reflect(h.div_ceil(16) * 16, w.div_ceil(16) * 16);
    Ok(detect_text(&padded, detector, cfg)?
        .into_iter()
        .map(|mut b| {
            b.clip_to(w as f64, h as f64);
            b
        })
        .filter(|b| b.area() > 0.0)
        .collect())
}

/// `evaluate`: image quality over matching filenames, plus detection and
/// optional spotting metrics when annotations are supplied.
pub fn evaluate_command(opts: &EvaluateOptions<'_>) -> Result<MetricsReport> {
    let by_stem = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        Ok(list_images(dir)?.into_iter().map(|p| (stem(&p), p)).collect())
    };
    let preds = by_stem(&opts.pred_dir)?;
    let gts = by_stem(&opts.gt_dir)?;
    let pk: BTreeSet<_> = preds.keys().collect();
    let gk: BTreeSet<_> = gts.keys().collect();
    if pk != gk {
        let only_pred: Vec<_> = pk.difference(&gk).map(|s| s.as_str()).collect();
        let only_gt: Vec<_> = gk.difference(&pk).map(|s| s.as_str()).collect();
        return Err(Error::Validation(format!(
            "prediction and ground-truth filenames differ; only in predictions: [{}]; only in ground truth: [{}]",
            only_pred.join(", "),
            only_gt.join(", ")
        )));
    }

    let stub = LumaPoolProvider;
    let detector = opts.detector.unwrap_or(&stub);
    if opts.ann_dir.is_some() && opts.det_dir.is_none() && opts.detector.is_none() {
        warn!("no detector supplied; detection metrics use the luma stub");
    }

    let mut report = MetricsReport {
        images: preds.len(),
        ..Default::default()
    };
    let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
    let mut det = DetectionCounts::default();
    let mut spot = SpottingCounts::default();
    for (name, pred_path) in &preds {
        let pred = load_image(pred_path)?;
        let gt = load_image(&gts[name])?;
        psnr_sum += psnr(&pred, &gt)?;
        ssim_sum += ssim(&pred, &gt)?;

        let Some(ann_dir) = &opts.ann_dir else { continue };
        let gt_boxes = match find_annotation(ann_dir, name) {
            Some(p) => parse_annotations(p, gt.width(), gt.height())?,
            None => {
                warn!("no annotation file for {name}; treating it as text-free");
                Vec::new()
            }
        };
        let pred_boxes = match &opts.det_dir {
            Some(d) => {
                let p = [format!("{name}.txt"), format!("res_{name}.txt")]
                    .into_iter()
                    .map(|n| d.join(n))
                    .find(|p| p.is_file());
                match p {
                    Some(p) => parse_annotations(p, pred.width(), pred.height())?,
                    None => Vec::new(),
                }
            }
            None => detect_on(&pred, detector, &opts.detect)?,
        };
        let m = match_detections(&pred_boxes, &gt_boxes, opts.iou_threshold);
        det += m.counts();
        if let Some(r) = opts.recognizer {
            spot += spotting_counts(&pred, &m, &pred_boxes, &gt_boxes, r);
        }
    }
    if !preds.is_empty() {
        report.psnr = Some(psnr_sum / preds.len() as f64);
        report.ssim = Some(ssim_sum / preds.len() as f64);
    }
    if opts.ann_dir.is_some() && !preds.is_empty() {
        let s = det.scores();
        report.precision = Some(s.precision);
        report.recall = Some(s.recall);
        report.hmean = Some(s.hmean);
        if opts.recognizer.is_some() {
            report.accuracy = Some(spot.accuracy());
        }
    }
    Ok(report)
}
