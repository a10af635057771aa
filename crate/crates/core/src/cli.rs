//! Command-line front end. Flags override the matching config keys.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::embedding::load_class_list;
use crate::error::{Error, Result};
use crate::pipeline::{DetectMode, Pipeline};
use crate::synthetic::{generate, SyntheticConfig};

#[derive(Debug, Parser)]
#[command(name = "zsc", version, about = "Zero-shot detection and template captioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and write the class embeddings.
    Embed(ConfigArgs),
    /// Train the projection on seen classes.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Learn the unseen score scale with the model frozen.
    Calibrate {
        #[command(flatten)]
        common: ConfigArgs,
        #[command(flatten)]
        calib: CalibrateArgs,
    },
    /// Decode detections on the test grids.
    Detect {
        #[command(flatten)]
        common: ConfigArgs,
        #[command(flatten)]
        detect: DetectArgs,
    },
    /// Caption the test images from their detections.
    Caption(ConfigArgs),
    /// Score detections: per-class AP, seen/unseen mAP and HM.
    EvalDet {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        iou_threshold: Option<f64>,
    },
    /// Score captions: unseen F1, BLEU, ROUGE-L, METEOR-lite.
    EvalCap(ConfigArgs),
    /// Every step from embedding to caption evaluation.
    RunAll {
        #[command(flatten)]
        common: ConfigArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        calib: CalibrateArgs,
        #[command(flatten)]
        detect: DetectArgs,
        #[arg(long)]
        iou_threshold: Option<f64>,
    },
    /// Write the synthetic fixture and its experiment config to a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Class-list file naming the simulated-unseen classes.
    #[arg(long)]
    pub simulated_unseen: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Use this alpha instead of learning one.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub alpha_lo: Option<f64>,
    #[arg(long)]
    pub alpha_hi: Option<f64>,
    #[arg(long)]
    pub alpha_tol: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub conf_threshold: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Score seen classes only.
    #[arg(long, conflicts_with = "no_alpha")]
    pub seen_only: bool,
    /// Score all classes with alpha = 1.
    #[arg(long)]
    pub no_alpha: bool,
}

impl DetectArgs {
    fn mode(&self) -> DetectMode {
        if self.seen_only {
            DetectMode::SeenOnly
        } else if self.no_alpha {
            DetectMode::Unscaled
        } else {
            DetectMode::Calibrated
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.output_dir, self.output_dir.clone());
        if let Some(p) = &self.simulated_unseen {
            cfg.data.simulated_unseen = Some(p.clone());
        }
        Ok(cfg)
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.lr, self.lr);
        set(&mut cfg.train.batch, self.batch);
    }
}

impl CalibrateArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if self.alpha.is_some() {
            cfg.calibrate.alpha = self.alpha;
        }
        set(&mut cfg.calibrate.alpha_lo, self.alpha_lo);
        set(&mut cfg.calibrate.alpha_hi, self.alpha_hi);
        set(&mut cfg.calibrate.alpha_tol, self.alpha_tol);
    }
}

impl DetectArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.detect.conf_threshold, self.conf_threshold);
        set(&mut cfg.detect.nms_iou, self.nms_iou);
    }
}

fn pipeline(cfg: ExperimentConfig) -> Result<Pipeline> {
    if let Some(p) = &cfg.data.simulated_unseen {
        if !p.is_file() {
            return Err(Error::Config(format!("file not found: {}", p.display())));
        }
        load_class_list(p)?;
    }
    Pipeline::new(cfg)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Embed(common) => {
            pipeline(common.load()?)?.embed()?;
        }
        Command::Train { common, train } => {
            let mut cfg = common.load()?;
            train.apply(&mut cfg);
            pipeline(cfg)?.train()?;
        }
        Command::Calibrate { common, calib } => {
            let mut cfg = common.load()?;
            calib.apply(&mut cfg);
            let rec = pipeline(cfg)?.calibrate()?;
            println!("alpha {}", rec.alpha);
        }
        Command::Detect { common, detect } => {
            let mut cfg = common.load()?;
            detect.apply(&mut cfg);
            pipeline(cfg)?.detect(detect.mode())?;
        }
        Command::Caption(common) => {
            pipeline(common.load()?)?.caption()?;
        }
        Command::EvalDet { common, iou_threshold } => {
            let mut cfg = common.load()?;
            set(&mut cfg.eval.iou_threshold, iou_threshold);
            let p = pipeline(cfg)?;
            print!("{}", p.eval_det()?.to_table(&p.split.unseen_set()));
        }
        Command::EvalCap(common) => {
            print!("{}", pipeline(common.load()?)?.eval_cap()?.to_table());
        }
        Command::RunAll {
            common,
            train,
            calib,
            detect,
            iou_threshold,
        } => {
            let mut cfg = common.load()?;
            train.apply(&mut cfg);
            calib.apply(&mut cfg);
            detect.apply(&mut cfg);
            set(&mut cfg.eval.iou_threshold, iou_threshold);
            let p = pipeline(cfg)?;
            let (det, cap) = p.run_all(detect.mode())?;
            print!("{}", det.to_table(&p.split.unseen_set()));
            print!("{}", cap.to_table());
        }
        Command::Synth { out, seed } => {
            let data = generate(&SyntheticConfig {
                seed,
                ..SyntheticConfig::default()
            })?;
            let path = data.write_dir(&out, seed)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
