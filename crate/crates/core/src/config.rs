//! Experiment configuration: one TOML file naming data files, the class
//! split and hyperparameters. Relative paths resolve against the config
//! file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::AlphaSearch;
use crate::detection::{DecodeParams, LossWeights, TrainConfig};
use crate::embedding::{load_class_list, EmbeddingOptions};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_IOU_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub word_vectors: PathBuf,
    pub vector_dim: usize,
    /// One class per line; the order is the reference order.
    pub seen_classes: PathBuf,
    pub unseen_classes: PathBuf,
    #[serde(default)]
    pub simulated_unseen: Option<PathBuf>,
    pub train_grids: PathBuf,
    pub train_annotations: PathBuf,
    /// Calibration set; defaults to the training set.
    #[serde(default)]
    pub calib_grids: Option<PathBuf>,
    #[serde(default)]
    pub calib_annotations: Option<PathBuf>,
    pub test_grids: PathBuf,
    pub test_annotations: PathBuf,
    pub corpus: PathBuf,
    pub references: PathBuf,
    /// Defaults to the bundled COCO lexicon.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub synonyms: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub loss_weights: LossWeights,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            loss_weights: t.weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub alpha_tol: f64,
    /// Skips the search and uses this value.
    pub alpha: Option<f64>,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let s = AlphaSearch::default();
        CalibrateSection {
            alpha_lo: s.lo,
            alpha_hi: s.hi,
            alpha_tol: s.tol,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectSection {
    fn default() -> Self {
        let p = DecodeParams::default();
        DetectSection {
            conf_threshold: p.conf_threshold,
            nms_iou: p.nms_iou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataPaths,
    #[serde(default)]
    pub embedding: EmbeddingOptions,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The class split named by a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplit {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
    pub simulated_unseen: BTreeSet<String>,
}

impl ClassSplit {
    pub fn all(&self) -> Vec<String> {
        self.seen.iter().chain(&self.unseen).cloned().collect()
    }

    pub fn seen_set(&self) -> BTreeSet<String> {
        self.seen.iter().cloned().collect()
    }

    pub fn unseen_set(&self) -> BTreeSet<String> {
        self.unseen.iter().cloned().collect()
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base_dir);
        Ok(cfg)
    }

    /// Reads and resolves a config file without validating it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [
            &mut d.word_vectors,
            &mut d.seen_classes,
            &mut d.unseen_classes,
            &mut d.train_grids,
            &mut d.train_annotations,
            &mut d.test_grids,
            &mut d.test_annotations,
            &mut d.corpus,
            &mut d.references,
        ] {
            fix(p);
        }
        for p in [
            &mut d.simulated_unseen,
            &mut d.calib_grids,
            &mut d.calib_annotations,
            &mut d.lexicon,
            &mut d.synonyms,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            epochs: self.train.epochs,
            batch: self.train.batch,
            weights: self.train.loss_weights,
            seed: self.seed,
        }
    }

    pub fn alpha_search(&self) -> AlphaSearch {
        AlphaSearch {
            lo: self.calibrate.alpha_lo,
            hi: self.calibrate.alpha_hi,
            tol: self.calibrate.alpha_tol,
        }
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            conf_threshold: self.detect.conf_threshold,
            nms_iou: self.detect.nms_iou,
        }
    }

    pub fn calib_paths(&self) -> (&Path, &Path) {
        (
            self.data.calib_grids.as_deref().unwrap_or(&self.data.train_grids),
            self.data
                .calib_annotations
                .as_deref()
                .unwrap_or(&self.data.train_annotations),
        )
    }

    /// Checks hyperparameters and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let mut required = vec![
            &d.word_vectors,
            &d.seen_classes,
            &d.unseen_classes,
            &d.train_grids,
            &d.train_annotations,
            &d.test_grids,
            &d.test_annotations,
            &d.corpus,
            &d.references,
        ];
        required.extend(
            [&d.simulated_unseen, &d.calib_grids, &d.calib_annotations, &d.lexicon, &d.synonyms]
                .into_iter()
                .flatten(),
        );
        if let Some(missing) = required.iter().find(|p| !p.is_file()) {
            return Err(Error::Config(format!("file not found: {}", missing.display())));
        }
        if d.vector_dim == 0 {
            return Err(Error::Config("data.vector_dim must be positive".into()));
        }
        let config_err = |e: Error| Error::Config(e.to_string());
        self.train_config().weights.validate().map_err(config_err)?;
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) || self.train.batch == 0 {
            return Err(Error::Config("train.lr and train.batch must be positive".into()));
        }
        self.alpha_search().validate().map_err(config_err)?;
        if let Some(a) = self.calibrate.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("calibrate.alpha must be positive, got {a}")));
            }
        }
        let det = &self.detect;
        if det.conf_threshold.is_nan() || det.conf_threshold < 0.0 || !(0.0..=1.0).contains(&det.nms_iou) {
            return Err(Error::Config(
                "detect.conf_threshold must be >= 0 and detect.nms_iou in [0, 1]".into(),
            ));
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold < 1.0) {
            return Err(Error::Config("eval.iou_threshold must lie in (0, 1)".into()));
        }
        self.split().map(|_| ())
    }

    /// Loads the class lists and checks the split.
    pub fn split(&self) -> Result<ClassSplit> {
        let seen = load_class_list(&self.data.seen_classes)?;
        let unseen = load_class_list(&self.data.unseen_classes)?;
        let simulated_unseen: BTreeSet<String> = match &self.data.simulated_unseen {
            Some(p) => load_class_list(p)?.into_iter().collect(),
            None => BTreeSet::new(),
        };
        if seen.is_empty() {
            return Err(Error::Config("seen class list is empty".into()));
        }
        let seen_set: BTreeSet<&String> = seen.iter().collect();
        if let Some(c) = unseen.iter().find(|c| seen_set.contains(c)) {
            return Err(Error::Config(format!("class `{c}` is both seen and unseen")));
        }
        if let Some(c) = simulated_unseen.iter().find(|c| !seen_set.contains(c)) {
            return Err(Error::Config(format!("simulated-unseen class `{c}` is not a seen class")));
        }
        Ok(ClassSplit {
            seen,
            unseen,
            simulated_unseen,
        })
    }
}
