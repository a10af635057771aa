//! Python bindings for `zsc_core`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use zsc_core::calibration::{apply_alpha, AlphaConfig};
use zsc_core::config::ExperimentConfig;
use zsc_core::detection::{Detection, GroundTruthBox};
use zsc_core::embedding::{EmbeddingOptions, EmbeddingSet, ReferenceSet, VectorTable};
use zsc_core::eval::{self, SynonymTable};
use zsc_core::pipeline::{DetectMode, Pipeline};
use zsc_core::synthetic::{generate, SyntheticConfig};
use zsc_core::templates::{fill_slots, CaptionTemplate, ClassLexicon};
use zsc_core::BBox;

create_exception!(zsc, ZscError, PyException);

fn err(e: zsc_core::Error) -> PyErr {
    ZscError::new_err(e.to_string())
}

type Box4 = (f64, f64, f64, f64);

fn bbox(b: Box4) -> BBox {
    BBox::new(b.0, b.1, b.2, b.3)
}

/// `2ab / (a + b)`, 0 when both are 0.
#[pyfunction]
fn harmonic_mean(a: f64, b: f64) -> PyResult<f64> {
    eval::harmonic_mean(a, b).map_err(err)
}

/// All-point AP for one class. Detections are `(image_id, box, score)` and
/// ground truth `(image_id, box)`, boxes as `(x_min, y_min, x_max, y_max)`.
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, iou_threshold = 0.5))]
fn average_precision(
    detections: Vec<(String, Box4, f64)>,
    ground_truth: Vec<(String, Box4)>,
    iou_threshold: f64,
) -> PyResult<f64> {
    let dets: Vec<Detection> = detections
        .into_iter()
        .map(|(image_id, b, score)| Detection {
            image_id,
            bbox: bbox(b),
            class_name: "c".into(),
            score,
        })
        .collect();
    let gts: Vec<GroundTruthBox> = ground_truth
        .into_iter()
        .map(|(image_id, b)| GroundTruthBox {
            image_id,
            bbox: bbox(b),
            class_name: "c".into(),
        })
        .collect();
    eval::average_precision(&dets, &gts, iou_threshold).map_err(err)
}

fn tokenized(refs: &[String]) -> Vec<Vec<String>> {
    refs.iter().map(|r| eval::tokenize(r)).collect()
}

/// BLEU-1 through BLEU-`max_n` of one sentence.
#[pyfunction]
#[pyo3(signature = (candidate, references, max_n = 4))]
fn bleu(candidate: &str, references: Vec<String>, max_n: usize) -> PyResult<Vec<f64>> {
    eval::bleu(&eval::tokenize(candidate), &tokenized(&references), max_n).map_err(err)
}

#[pyfunction]
fn rouge_l(candidate: &str, references: Vec<String>) -> PyResult<f64> {
    eval::rouge_l(&eval::tokenize(candidate), &tokenized(&references)).map_err(err)
}

/// METEOR-lite; `synonyms` is a list of word pairs.
#[pyfunction]
#[pyo3(signature = (candidate, references, synonyms = Vec::new()))]
fn meteor_lite(candidate: &str, references: Vec<String>, synonyms: Vec<(String, String)>) -> f64 {
    let mut table = SynonymTable::default();
    for (a, b) in &synonyms {
        table.insert(a, b);
    }
    eval::meteor_lite(&eval::tokenize(candidate), &tokenized(&references), &table)
}

/// Similarity embeddings of `classes` against the `seen` references.
#[pyfunction]
fn similarity_embeddings(
    vectors: BTreeMap<String, Vec<f64>>,
    seen: Vec<String>,
    classes: Vec<String>,
) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let dim = vectors.values().next().map_or(0, Vec::len);
    let table = VectorTable::from_entries(dim, vectors).map_err(err)?;
    let refs = ReferenceSet::new(&seen, &table, EmbeddingOptions::default()).map_err(err)?;
    let set = EmbeddingSet::build(&classes, &refs, &table).map_err(err)?;
    Ok(set.iter().map(|e| (e.class_name.clone(), e.values.clone())).collect())
}

/// Scales the scores of `unseen` classes by `alpha`.
#[pyfunction]
fn scale_unseen(
    scores: BTreeMap<String, f64>,
    alpha: f64,
    unseen: BTreeSet<String>,
) -> PyResult<BTreeMap<String, f64>> {
    let cfg = AlphaConfig::new(alpha, unseen).map_err(err)?;
    Ok(apply_alpha(&scores, &cfg))
}

/// Fills a slotted template such as `"a <animal> next to a <vehicle>"`
/// from `(class, score)` detections, using the bundled COCO lexicon.
#[pyfunction]
fn fill_template(template: &str, detections: Vec<(String, f64)>) -> PyResult<String> {
    let t = CaptionTemplate::parse(template, 1).map_err(err)?;
    let dets: Vec<Detection> = detections
        .into_iter()
        .map(|(class_name, score)| Detection {
            image_id: "image".into(),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            class_name,
            score,
        })
        .collect();
    fill_slots(&t, &dets, &ClassLexicon::coco())
        .map(|f| f.sentence)
        .map_err(err)
}

/// Writes the synthetic fixture to `directory` and returns its config path.
#[pyfunction]
#[pyo3(signature = (directory, seed = 7))]
fn write_synthetic(directory: PathBuf, seed: u64) -> PyResult<PathBuf> {
    let data = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .map_err(err)?;
    data.write_dir(directory, seed).map_err(err)
}

/// An experiment loaded from a TOML config; each method runs one step and
/// writes its artifacts to the output directory.
#[pyclass]
struct Experiment {
    inner: Pipeline,
}

fn detect_mode(mode: &str) -> PyResult<DetectMode> {
    match mode {
        "calibrated" => Ok(DetectMode::Calibrated),
        "unscaled" => Ok(DetectMode::Unscaled),
        "seen_only" => Ok(DetectMode::SeenOnly),
        other => Err(ZscError::new_err(format!(
            "unknown mode `{other}`; expected calibrated, unscaled or seen_only"
        ))),
    }
}

#[pymethods]
impl Experiment {
    #[new]
    #[pyo3(signature = (config, output_dir = None, alpha = None, epochs = None))]
    fn new(config: PathBuf, output_dir: Option<PathBuf>, alpha: Option<f64>, epochs: Option<usize>) -> PyResult<Self> {
        let mut cfg = ExperimentConfig::load(config).map_err(err)?;
        if let Some(d) = output_dir {
            cfg.output_dir = d;
        }
        if alpha.is_some() {
            cfg.calibrate.alpha = alpha;
        }
        if let Some(e) = epochs {
            cfg.train.epochs = e;
        }
        Ok(Experiment {
            inner: Pipeline::new(cfg).map_err(err)?,
        })
    }

    #[getter]
    fn seen(&self) -> Vec<String> {
        self.inner.split.seen.clone()
    }

    #[getter]
    fn unseen(&self) -> Vec<String> {
        self.inner.split.unseen.clone()
    }

    /// Class name to embedding, for every seen and unseen class.
    fn embed(&self) -> PyResult<BTreeMap<String, Vec<f64>>> {
        let set = self.inner.embed().map_err(err)?;
        Ok(set.iter().map(|e| (e.class_name.clone(), e.values.clone())).collect())
    }

    /// Trains and returns the final training loss.
    fn train(&self) -> PyResult<Option<f64>> {
        Ok(self.inner.train().map_err(err)?.final_loss)
    }

    fn calibrate(&self) -> PyResult<f64> {
        Ok(self.inner.calibrate().map_err(err)?.alpha)
    }

    /// Returns `(image_id, class, score, box)` tuples.
    #[pyo3(signature = (mode = "calibrated"))]
    fn detect(&self, mode: &str) -> PyResult<Vec<(String, String, f64, Box4)>> {
        let dets = self.inner.detect(detect_mode(mode)?).map_err(err)?;
        Ok(dets
            .into_iter()
            .map(|d| {
                let b = d.bbox;
                (d.image_id, d.class_name, d.score, (b.x_min, b.y_min, b.x_max, b.y_max))
            })
            .collect())
    }

    /// Image id to caption.
    fn caption(&self) -> PyResult<BTreeMap<String, String>> {
        let records = self.inner.caption().map_err(err)?;
        Ok(records.into_iter().map(|r| (r.image_id, r.caption)).collect())
    }

    /// `(per_class_ap, u_map, s_map, hm)`.
    fn eval_det(&self) -> PyResult<(BTreeMap<String, f64>, f64, f64, f64)> {
        let r = self.inner.eval_det().map_err(err)?;
        Ok((r.per_class_ap, r.u_map, r.s_map, r.hm))
    }

    /// Metric name to value: `avg_f1`, `bleu1`..`bleu4`, `rouge_l`, `meteor`.
    fn eval_cap(&self) -> PyResult<BTreeMap<String, f64>> {
        let r = self.inner.eval_cap().map_err(err)?;
        let mut out = BTreeMap::from([
            ("avg_f1".to_string(), r.avg_f1),
            ("rouge_l".to_string(), r.rouge_l),
            ("meteor".to_string(), r.meteor),
        ]);
        for (i, b) in r.bleu.iter().enumerate() {
            out.insert(format!("bleu{}", i + 1), *b);
        }
        Ok(out)
    }
}

#[pymodule]
pub fn zsc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ZscError", m.py().get_type::<ZscError>())?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(meteor_lite, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(scale_unseen, m)?)?;
    m.add_function(wrap_pyfunction!(fill_template, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic, m)?)?;
    Ok(())
}
