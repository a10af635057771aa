//! The experiment steps behind the command-line subcommands. Every step
//! reads its inputs from the config and the output directory and writes
//! its artifacts back there.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_loss, learn_alpha, AlphaConfig, AlphaSearch};
use crate::config::{ClassSplit, ExperimentConfig};
use crate::detection::{
    decode_detections, load_grids, targets_for, train, CellGrid, Detection, GroundTruthBox, ProjectionModel,
};
use crate::embedding::{load_word_vectors, EmbeddingSet, ReferenceSet, VectorTable};
use crate::error::Result;
use crate::eval::{evaluate_captions, evaluate_detection, CapEvalReport, DetEvalReport, SynonymTable};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl, write_text};
use crate::synthetic::ReferenceCaptions;
use crate::templates::{
    abstract_captions, caption_detections, exclude_classes, CaptionRecord, ClassLexicon, CorpusEntry, TemplateBank,
};

pub const EMBEDDINGS_FILE: &str = "class_embeddings.jsonl";
pub const MASKED_EMBEDDINGS_FILE: &str = "class_embeddings_masked.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const LOSS_LOG_FILE: &str = "train_loss.log";
pub const ALPHA_FILE: &str = "alpha.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const BANK_FILE: &str = "template_bank.json";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const DET_REPORT_FILE: &str = "det_report.json";
pub const CAP_REPORT_FILE: &str = "cap_report.json";

/// Contents of the alpha artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub alpha: f64,
    /// False when alpha came from the config or the command line.
    pub learned: bool,
    pub search: AlphaSearch,
    pub simulated_unseen: Vec<String>,
    pub unseen: Vec<String>,
    /// Calibration loss at `alpha` and at 1.
    pub objective: Option<f64>,
    pub objective_at_one: Option<f64>,
}

/// Which class scores the detector is allowed to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectMode {
    /// Seen and unseen classes with the calibrated alpha.
    #[default]
    Calibrated,
    /// Seen and unseen classes, alpha fixed at 1.
    Unscaled,
    /// Seen classes only.
    SeenOnly,
}

/// A validated experiment with its class split and word vectors loaded.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub split: ClassSplit,
    table: VectorTable,
    refs: ReferenceSet,
}

fn restrict(gts: Vec<GroundTruthBox>, keep: &BTreeSet<String>, what: &str) -> Vec<GroundTruthBox> {
    let before = gts.len();
    let kept: Vec<GroundTruthBox> = gts.into_iter().filter(|g| keep.contains(&g.class_name)).collect();
    if kept.len() < before {
        log::warn!("{what}: dropped {} boxes of non-seen classes", before - kept.len());
    }
    kept
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let split = config.split()?;
        let table = load_word_vectors(&config.data.word_vectors, config.data.vector_dim)?;
        let refs = ReferenceSet::new(&split.seen, &table, config.embedding)?;
        Ok(Pipeline {
            config,
            split,
            table,
            refs,
        })
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn seen_embeddings(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::build(&self.split.seen, &self.refs, &self.table)
    }

    pub fn all_embeddings(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::build(&self.split.all(), &self.refs, &self.table)
    }

    /// Writes every class embedding, plus the masked seen set when a
    /// simulated-unseen split is configured.
    pub fn embed(&self) -> Result<EmbeddingSet> {
        let all = self.all_embeddings()?;
        write_text(self.artifact(EMBEDDINGS_FILE), &all.to_jsonl()?)?;
        if !self.split.simulated_unseen.is_empty() {
            let idx = self.refs.indices_of(&self.split.simulated_unseen)?;
            let masked = self.seen_embeddings()?.masked(&idx)?;
            write_text(self.artifact(MASKED_EMBEDDINGS_FILE), &masked.to_jsonl()?)?;
        }
        log::info!("embedded {} classes", all.len());
        Ok(all)
    }

    fn seen_targets_of(&self, grids: &[CellGrid], gts: Vec<GroundTruthBox>, what: &str) -> Result<Vec<crate::detection::CellTargets>> {
        let gts = restrict(gts, &self.split.seen_set(), what);
        targets_for(grids, &gts)
    }

    /// Trains on seen classes and writes the model and per-epoch loss log.
    pub fn train(&self) -> Result<ProjectionModel> {
        let grids = load_grids(&self.config.data.train_grids)?;
        let gts = read_jsonl(&self.config.data.train_annotations)?;
        let targets = self.seen_targets_of(&grids, gts, "training set")?;
        let outcome = train(&grids, &targets, &self.seen_embeddings()?, &self.config.train_config())?;
        let mut log = String::new();
        for (epoch, loss) in outcome.loss_history.iter().enumerate() {
            let _ = writeln!(log, "{epoch}\t{loss}");
        }
        write_text(self.artifact(LOSS_LOG_FILE), &log)?;
        outcome.model.save(self.artifact(MODEL_FILE))?;
        log::info!(
            "trained {} epochs on {} images, final loss {:?}",
            self.config.train.epochs,
            grids.len(),
            outcome.model.final_loss
        );
        Ok(outcome.model)
    }

    pub fn load_model(&self) -> Result<ProjectionModel> {
        ProjectionModel::load(self.artifact(MODEL_FILE))
    }

    /// Learns alpha on the calibration set with the model frozen, or takes
    /// `calibrate.alpha` as given.
    pub fn calibrate(&self) -> Result<AlphaRecord> {
        let search = self.config.alpha_search();
        let mut record = AlphaRecord {
            alpha: 1.0,
            learned: false,
            search,
            simulated_unseen: self.split.simulated_unseen.iter().cloned().collect(),
            unseen: self.split.unseen.clone(),
            objective: None,
            objective_at_one: None,
        };
        if let Some(alpha) = self.config.calibrate.alpha {
            record.alpha = alpha;
        } else {
            let model = self.load_model()?;
            let (gp, ap) = self.config.calib_paths();
            let grids = load_grids(gp)?;
            let targets = self.seen_targets_of(&grids, read_jsonl(ap)?, "calibration set")?;
            let seen = self.seen_embeddings()?;
            let sim = &self.split.simulated_unseen;
            let alpha = learn_alpha(&model, &grids, &targets, &seen, sim, &search)?;
            let obj = calibration_loss(&model, &grids, &targets, &seen, sim, &[alpha, 1.0])?;
            record.alpha = alpha;
            record.learned = true;
            record.objective = Some(obj[0]);
            record.objective_at_one = Some(obj[1]);
        }
        AlphaConfig::new(record.alpha, &record.unseen)?;
        write_json(self.artifact(ALPHA_FILE), &record)?;
        log::info!("alpha = {}", record.alpha);
        Ok(record)
    }

    pub fn test_grids(&self) -> Result<Vec<CellGrid>> {
        load_grids(&self.config.data.test_grids)
    }

    /// Decodes every test grid and writes the detections.
    pub fn detect(&self, mode: DetectMode) -> Result<Vec<Detection>> {
        let model = self.load_model()?;
        let (set, alpha) = match mode {
            DetectMode::SeenOnly => (self.seen_embeddings()?, None),
            DetectMode::Unscaled => (self.all_embeddings()?, None),
            DetectMode::Calibrated => {
                let alpha = match self.config.calibrate.alpha {
                    Some(a) => a,
                    None => read_json::<AlphaRecord>(self.artifact(ALPHA_FILE))?.alpha,
                };
                let cfg = AlphaConfig::new(alpha, &self.split.unseen)?;
                cfg.check_disjoint(&self.split.seen)?;
                (self.all_embeddings()?, Some(cfg))
            }
        };
        let params = self.config.decode_params();
        let mut dets = Vec::new();
        for grid in self.test_grids()? {
            dets.extend(decode_detections(&grid, &model, &set, &params, alpha.as_ref())?);
        }
        write_jsonl(self.artifact(DETECTIONS_FILE), &dets)?;
        log::info!("{} detections", dets.len());
        Ok(dets)
    }

    fn lexicon(&self) -> Result<ClassLexicon> {
        match &self.config.data.lexicon {
            Some(p) => ClassLexicon::load(p),
            None => Ok(ClassLexicon::coco()),
        }
    }

    /// Builds the template bank from the unseen-free corpus.
    pub fn template_bank(&self) -> Result<TemplateBank> {
        let corpus: Vec<CorpusEntry> = read_jsonl(&self.config.data.corpus)?;
        let kept = exclude_classes(&corpus, &self.split.unseen_set());
        log::info!("template corpus: {} of {} captions kept", kept.len(), corpus.len());
        Ok(abstract_captions(&kept, &self.lexicon()?))
    }

    /// Captions each test image from the detections file.
    pub fn caption(&self) -> Result<Vec<CaptionRecord>> {
        let bank = self.template_bank()?;
        write_json(self.artifact(BANK_FILE), &bank)?;
        let lexicon = self.lexicon()?;
        let dets: Vec<Detection> = read_jsonl(self.artifact(DETECTIONS_FILE))?;
        let mut by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
        for d in &dets {
            by_image.entry(d.image_id.as_str()).or_default().push(d.clone());
        }
        let records = self
            .test_grids()?
            .iter()
            .map(|g| {
                let d = by_image.get(g.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                caption_detections(&g.image_id, d, &bank, &lexicon)
            })
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(self.artifact(CAPTIONS_FILE), &records)?;
        Ok(records)
    }

    pub fn eval_det(&self) -> Result<DetEvalReport> {
        let dets: Vec<Detection> = read_jsonl(self.artifact(DETECTIONS_FILE))?;
        let gts: Vec<GroundTruthBox> = read_jsonl(&self.config.data.test_annotations)?;
        let report = evaluate_detection(
            &dets,
            &gts,
            &self.split.seen_set(),
            &self.split.unseen_set(),
            self.config.eval.iou_threshold,
        )?;
        write_json(self.artifact(DET_REPORT_FILE), &report)?;
        Ok(report)
    }

    pub fn eval_cap(&self) -> Result<CapEvalReport> {
        let records: Vec<CaptionRecord> = read_jsonl(self.artifact(CAPTIONS_FILE))?;
        let captions: BTreeMap<String, String> =
            records.into_iter().map(|r| (r.image_id, r.caption)).collect();
        let refs: Vec<ReferenceCaptions> = read_jsonl(&self.config.data.references)?;
        let references = refs.into_iter().map(|r| (r.image_id, r.captions)).collect();
        let gts: Vec<GroundTruthBox> = read_jsonl(&self.config.data.test_annotations)?;
        let mut labels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for g in gts {
            labels.entry(g.image_id).or_default().insert(g.class_name);
        }
        let synonyms = match &self.config.data.synonyms {
            Some(p) => SynonymTable::load(p)?,
            None => SynonymTable::default(),
        };
        let report = evaluate_captions(&captions, &references, &labels, &self.split.unseen_set(), &synonyms)?;
        write_json(self.artifact(CAP_REPORT_FILE), &report)?;
        Ok(report)
    }

    /// Every step in order.
    pub fn run_all(&self, mode: DetectMode) -> Result<(DetEvalReport, CapEvalReport)> {
        self.embed()?;
        self.train()?;
        if mode == DetectMode::Calibrated {
            self.calibrate()?;
        }
        self.detect(mode)?;
        self.caption()?;
        Ok((self.eval_det()?, self.eval_cap()?))
    }
}
