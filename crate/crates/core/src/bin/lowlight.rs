use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lowlight_text::data::DarkenSampler;
use lowlight_text::pipeline::{
    darken_command, enhance_command, evaluate_command, output_root, train_command, EvaluateOptions,
};
use lowlight_text::texteval::{load_provider, CommandRecognizer};

#[derive(Parser)]
#[command(name = "lowlight", version, about = "Text-aware low-light image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the enhancer from a JSON config and a dataset manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Frozen region-score detector (mini net archive, CRAFT archive or safetensors).
        #[arg(long)]
        detector_weights: Option<PathBuf>,
        /// Output directory; LOWLIGHT_OUTPUT overrides the default `runs/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enhance every image of a directory with a trained checkpoint.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the attention maps to `<out>/attention/`.
        #[arg(long)]
        dump_attention: bool,
    },
    /// Build a synthetic low-light dataset from bright images and annotations.
    Darken {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Exposure scale range `min,max`.
        #[arg(long, value_parser = parse_range, default_value = "0.01,0.0333333333")]
        scale_range: (f64, f64),
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 2.2)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Image-quality, detection and spotting metrics.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        ann: Option<PathBuf>,
        /// JSON report path; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        detector_weights: Option<PathBuf>,
        /// Precomputed detections instead of running a detector.
        #[arg(long)]
        det: Option<PathBuf>,
        /// Recognizer program; it receives a crop PNG path and prints the word.
        #[arg(long)]
        recognizer: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `min,max`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(a > 0.0 && a <= b && b <= 1.0) {
        return Err(format!("need 0 < min <= max <= 1, got {a},{b}"));
    }
    Ok((a, b))
}

fn run(cli: Cli) -> lowlight_text::Result<()> {
    match cli.command {
        Command::Train {
            config,
            manifest,
            detector_weights,
            out,
        } => {
            let out = out.unwrap_or_else(|| output_root("runs"));
            let outcome = train_command(&config, &manifest, detector_weights.as_deref(), &out)?;
            println!("{}", outcome.checkpoint.display());
        }
        Command::Enhance {
            ckpt,
            input,
            out,
            dump_attention,
        } => {
            enhance_command(&input, &ckpt, &out, dump_attention)?;
        }
        Command::Darken {
            input,
            out,
            scale_range,
            sigma,
            gamma,
            seed,
        } => {
            let sampler = DarkenSampler {
                scale_min: scale_range.0,
                scale_max: scale_range.1,
                read_noise_sigma: sigma,
                gamma,
                seed,
            };
            darken_command(&input, &out, &sampler)?;
        }
        Command::Evaluate {
            pred,
            gt,
            ann,
            report,
            detector_weights,
            det,
            recognizer,
            iou,
        } => {
            let detector = detector_weights.map(load_provider).transpose()?;
            let recognizer = recognizer.map(|program| CommandRecognizer { program, args: vec![] });
            let mut opts = EvaluateOptions::new(pred, gt);
            opts.ann_dir = ann;
            opts.det_dir = det;
            opts.detector = detector.as_deref();
            opts.recognizer = recognizer.as_ref().map(|r| r as _);
            opts.iou_threshold = iou;
            let metrics = evaluate_command(&opts)?;
            match report {
                Some(p) => metrics.save(p)?,
                None => println!("{}", serde_json::to_string_pretty(&metrics)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
