//! Synthetic generalized zero-shot fixture: word vectors, cell grids,
//! boxes and captions for eight classes, two of them unseen.
//!
//! Seen class name vectors form a regular simplex, the least crowded
//! arrangement for six classes. Each unseen class is a seen class plus a
//! direction no seen class uses, so a detector trained on seen features
//! scores unseen instances like their nearest seen neighbour.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::{write_grids, Cell, CellGrid, Detection, GroundTruthBox};
use crate::embedding::VectorTable;
use crate::error::Result;
use crate::geometry::BBox;
use crate::io::{write_jsonl, write_text};
use crate::templates::{fill_slots, CaptionTemplate, ClassLexicon, CorpusEntry};

pub const SEEN: [&str; 6] = ["horse", "dog", "cat", "train", "car", "cake"];
pub const UNSEEN: [&str; 2] = ["zebra", "bus"];
/// Seen classes held out as unseen while learning alpha.
pub const SIMULATED_UNSEEN: [&str; 2] = ["dog", "car"];
/// Seen class each unseen class is built from.
const NEAREST_SEEN: [(&str, &str); 2] = [("zebra", "horse"), ("bus", "train")];
const WORD_DIM: usize = 8;

const ANIMAL: &[&str] = &[
    "a <animal> standing in a field",
    "a <animal> grazing on the grass",
    "two <animal:pl> standing in a field",
];
const VEHICLE: &[&str] = &[
    "a red <vehicle> driving down a road",
    "a <vehicle> parked on the street",
    "a <vehicle> stopped at a station",
];
const FOOD: &[&str] = &["a <food> on a plate", "a piece of <food> on a table"];
const PAIR: &[&str] = &["a <a> next to a <b>", "a <b> near a <a>"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train_images: usize,
    pub test_images: usize,
    pub grid_side: usize,
    /// Std-dev of the Gaussian noise added to object features.
    pub noise: f64,
    /// Weight of the private direction in each unseen class name vector.
    pub unseen_offset: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            train_images: 60,
            test_images: 48,
            grid_side: 4,
            noise: 0.05,
            unseen_offset: 1.0,
        }
    }
}

/// Reference captions for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCaptions {
    pub image_id: String,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub words: Vec<(String, Vec<f64>)>,
    pub train_grids: Vec<CellGrid>,
    pub train_boxes: Vec<GroundTruthBox>,
    pub test_grids: Vec<CellGrid>,
    pub test_boxes: Vec<GroundTruthBox>,
    pub corpus: Vec<CorpusEntry>,
    pub references: Vec<ReferenceCaptions>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Class name vectors: seen classes on a regular simplex in the first six
/// dimensions, unseen classes offset from their neighbour along a spare axis.
pub fn class_word_vectors(unseen_offset: f64) -> Vec<(String, Vec<f64>)> {
    let n = SEEN.len();
    let mut out: Vec<(String, Vec<f64>)> = SEEN
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut v = vec![0.0; WORD_DIM];
            for (j, x) in v.iter_mut().take(n).enumerate() {
                *x = if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64;
            }
            (c.to_string(), unit(v))
        })
        .collect();
    for (k, (unseen, near)) in NEAREST_SEEN.iter().enumerate() {
        let base = &out.iter().find(|(c, _)| c == near).expect("seen neighbour").1;
        let mut v = base.clone();
        v[n + k] += unseen_offset;
        out.push((unseen.to_string(), unit(v)));
    }
    out
}

pub fn word_table(words: &[(String, Vec<f64>)]) -> Result<VectorTable> {
    VectorTable::from_entries(WORD_DIM, words.iter().map(|(w, v)| (w.as_str(), v.clone())))
}

fn class_group(class: &str) -> &'static str {
    match class {
        "horse" | "dog" | "cat" | "zebra" => "animal",
        "train" | "car" | "bus" => "vehicle",
        _ => "food",
    }
}

fn patterns_for(class: &str) -> &'static [&'static str] {
    match class_group(class) {
        "animal" => ANIMAL,
        "vehicle" => VEHICLE,
        _ => FOOD,
    }
}

/// Writes a caption for the given classes by filling a pattern.
fn realize(pattern: &str, classes: &[&str], lexicon: &ClassLexicon) -> Result<String> {
    let mut text = pattern.to_string();
    if classes.len() == 2 {
        text = text
            .replace("<a>", &format!("<{}>", class_group(classes[0])))
            .replace("<b>", &format!("<{}>", class_group(classes[1])));
    }
    let template = CaptionTemplate::parse(&text, 1)?;
    // Ordered slots pick detections by descending score.
    let order: Vec<&str> = if pattern.contains("<b> near a <a>") {
        classes.iter().rev().copied().collect()
    } else {
        classes.to_vec()
    };
    let dets: Vec<Detection> = order
        .iter()
        .enumerate()
        .map(|(i, c)| Detection {
            image_id: String::new(),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            class_name: c.to_string(),
            score: 1.0 - 0.1 * i as f64,
        })
        .collect();
    Ok(fill_slots(&template, &dets, lexicon)?.sentence)
}

fn captions_for(classes: &[&str], lexicon: &ClassLexicon) -> Result<Vec<String>> {
    let mut out = Vec::new();
    if classes.len() == 2 {
        for p in PAIR {
            out.push(realize(p, classes, lexicon)?);
        }
    }
    for p in patterns_for(classes[0]) {
        out.push(realize(p, &classes[..1], lexicon)?);
    }
    Ok(out)
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
    words: BTreeMap<String, Vec<f64>>,
    noise: Normal<f64>,
}

impl Generator<'_> {
    fn image(&mut self, id: &str, classes: &[&str]) -> Result<(CellGrid, Vec<GroundTruthBox>)> {
        let s = self.cfg.grid_side;
        let mut free: Vec<usize> = (0..s * s).collect();
        free.shuffle(&mut self.rng);
        let mut placed: BTreeMap<usize, &str> = BTreeMap::new();
        for (c, cell) in classes.iter().zip(free) {
            placed.insert(cell, c);
        }
        let step = 1.0 / s as f64;
        let mut cells = Vec::with_capacity(s * s);
        let mut boxes = Vec::new();
        for idx in 0..s * s {
            let (gx, gy) = ((idx % s) as f64, (idx / s) as f64);
            match placed.get(&idx) {
                Some(class) => {
                    let cx = (gx + self.rng.random_range(0.3..0.7)) * step;
                    let cy = (gy + self.rng.random_range(0.3..0.7)) * step;
                    let w = self.rng.random_range(0.12..0.22);
                    let h = self.rng.random_range(0.12..0.22);
                    let gt = BBox::from_center(cx, cy, w, h).clamp_unit();
                    boxes.push(GroundTruthBox {
                        image_id: id.to_string(),
                        bbox: gt,
                        class_name: class.to_string(),
                    });
                    let [pcx, pcy, pw, ph] = gt.center_size();
                    let jitter = 0.01;
                    let box_pred = [
                        (pcx + self.rng.random_range(-jitter..jitter)).clamp(0.0, 1.0),
                        (pcy + self.rng.random_range(-jitter..jitter)).clamp(0.0, 1.0),
                        pw * self.rng.random_range(0.95..1.05),
                        ph * self.rng.random_range(0.95..1.05),
                    ];
                    let mut feature: Vec<f64> = self.words[*class]
                        .iter()
                        .map(|x| x + self.noise.sample(&mut self.rng))
                        .collect();
                    feature.push(1.0);
                    cells.push(Cell {
                        feature,
                        box_pred,
                        objectness: self.rng.random_range(0.9..1.0),
                    });
                }
                None => {
                    let mut feature: Vec<f64> =
                        (0..WORD_DIM).map(|_| 3.0 * self.noise.sample(&mut self.rng)).collect();
                    feature.push(1.0);
                    cells.push(Cell {
                        feature,
                        box_pred: [(gx + 0.5) * step, (gy + 0.5) * step, step, step],
                        objectness: self.rng.random_range(0.0..0.1),
                    });
                }
            }
        }
        Ok((CellGrid::new(id, s, cells)?, boxes))
    }

    fn pick_classes(&mut self, first: &'static str, pool: &[&'static str]) -> Vec<&'static str> {
        let mut classes = vec![first];
        if self.rng.random_bool(0.5) {
            let others: Vec<&str> = pool.iter().copied().filter(|c| *c != first).collect();
            classes.push(others[self.rng.random_range(0..others.len())]);
        }
        classes
    }
}

/// Builds the fixture. Training images hold seen classes only; test images
/// cycle through all eight classes as their main object.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let words = class_word_vectors(cfg.unseen_offset);
    let lexicon = ClassLexicon::coco();
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        words: words.iter().cloned().collect(),
        noise: Normal::new(0.0, cfg.noise.max(0.0)).expect("finite std-dev"),
    };

    let mut train_grids = Vec::new();
    let mut train_boxes = Vec::new();
    let mut corpus = Vec::new();
    for i in 0..cfg.train_images {
        let id = format!("train_{i:03}");
        let classes = g.pick_classes(SEEN[i % SEEN.len()], &SEEN);
        let (grid, boxes) = g.image(&id, &classes)?;
        train_grids.push(grid);
        train_boxes.extend(boxes);
        let mut caps = captions_for(&classes, &lexicon)?;
        caps.shuffle(&mut g.rng);
        for caption in caps.into_iter().take(2) {
            corpus.push(CorpusEntry {
                image_id: id.clone(),
                caption,
                classes: classes.iter().map(|c| c.to_string()).collect(),
            });
        }
    }

    let all: Vec<&'static str> = SEEN.iter().chain(UNSEEN.iter()).copied().collect();
    let mut test_grids = Vec::new();
    let mut test_boxes = Vec::new();
    let mut references = Vec::new();
    for i in 0..cfg.test_images {
        let id = format!("test_{i:03}");
        let classes = g.pick_classes(all[i % all.len()], &all);
        let (grid, boxes) = g.image(&id, &classes)?;
        test_grids.push(grid);
        test_boxes.extend(boxes);
        references.push(ReferenceCaptions {
            image_id: id,
            captions: captions_for(&classes, &lexicon)?,
        });
    }

    Ok(SyntheticData {
        words,
        train_grids,
        train_boxes,
        test_grids,
        test_boxes,
        corpus,
        references,
    })
}

fn lines<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    items.into_iter().fold(String::new(), |mut s, c| {
        s.push_str(c);
        s.push('\n');
        s
    })
}

impl SyntheticData {
    /// Test-image class sets, as consumed by caption F1.
    pub fn test_labels(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for g in &self.test_grids {
            out.entry(g.image_id.clone()).or_default();
        }
        for b in &self.test_boxes {
            out.entry(b.image_id.clone()).or_default().insert(b.class_name.clone());
        }
        out
    }

    /// Writes every fixture file plus an `experiment.toml` pointing at them,
    /// and returns the config path.
    pub fn write_dir(&self, dir: impl AsRef<Path>, seed: u64) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let mut vectors = format!("{} {}\n", self.words.len(), WORD_DIM);
        for (w, v) in &self.words {
            let _ = write!(vectors, "{w}");
            for x in v {
                let _ = write!(vectors, " {x}");
            }
            vectors.push('\n');
        }
        write_text(dir.join("vectors.txt"), &vectors)?;
        write_text(dir.join("seen.txt"), &lines(SEEN))?;
        write_text(dir.join("unseen.txt"), &lines(UNSEEN))?;
        write_text(dir.join("simulated_unseen.txt"), &lines(SIMULATED_UNSEEN))?;
        write_text(dir.join("train.grids"), &write_grids(&self.train_grids))?;
        write_text(dir.join("test.grids"), &write_grids(&self.test_grids))?;
        write_jsonl(dir.join("train_boxes.jsonl"), &self.train_boxes)?;
        write_jsonl(dir.join("test_boxes.jsonl"), &self.test_boxes)?;
        write_jsonl(dir.join("corpus.jsonl"), &self.corpus)?;
        write_jsonl(dir.join("references.jsonl"), &self.references)?;
        let config = format!(
            r#"seed = {seed}
output_dir = "out"

[data]
word_vectors = "vectors.txt"
vector_dim = {WORD_DIM}
seen_classes = "seen.txt"
unseen_classes = "unseen.txt"
simulated_unseen = "simulated_unseen.txt"
train_grids = "train.grids"
train_annotations = "train_boxes.jsonl"
test_grids = "test.grids"
test_annotations = "test_boxes.jsonl"
corpus = "corpus.jsonl"
references = "references.jsonl"

[train]
epochs = 160
batch = 32
lr = 0.001
"#
        );
        let path = dir.join("experiment.toml");
        write_text(&path, &config)?;
        Ok(path)
    }
}
