//! Low-light image enhancement guided by text-detection feedback.
//!
//! The enhancer is a U-Net whose skip connections are gated by a
//! luminance-derived attention map and whose input carries an edge map from a
//! small frozen estimator. Training combines L1, MS-SSIM and a loss on the
//! region scores of a frozen text detector.

pub mod archive;
pub mod attention;
pub mod data;
pub mod domain;
pub mod edge;
pub mod enhancer;
pub mod error;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod texteval;

pub use attention::{attention_pyramid, compute_attention, AttentionMap};
pub use domain::{ImageTensor, GrayMap, PairedSample, Source, TextBox};
pub use edge::{estimate_edges, EdgeEstimatorParams, EdgeMap};
pub use enhancer::{enhance, EnhancerParams};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossToggles, LossWeights, MsSsimParams};
pub use pipeline::{Checkpoint, MetricsReport, TrainConfig, Trainer};
