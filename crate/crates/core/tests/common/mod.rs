//! Fixture builders and independent reference implementations shared by
//! the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsc_core::detection::{
    targets_for, total_loss, total_loss_gradient, Cell, CellGrid, CellTargets, Detection, GroundTruthBox,
    LossWeights, ProjectionModel,
};
use zsc_core::embedding::{EmbeddingOptions, EmbeddingSet, ReferenceSet, VectorTable};
use zsc_core::eval::{average_precision, iou};
use zsc_core::BBox;

pub fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn set(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Grid with one object cell per entry of `objects` (class, cell index) and
/// random features everywhere.
pub fn random_grid(
    rng: &mut ChaCha8Rng,
    id: &str,
    side: usize,
    fdim: usize,
    objects: &[(&str, usize)],
) -> (CellGrid, Vec<GroundTruthBox>) {
    let cells = (0..side * side)
        .map(|_| Cell {
            feature: (0..fdim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            box_pred: [0.5, 0.5, 0.2, 0.2],
            objectness: rng.random_range(0.0..1.0),
        })
        .collect();
    let grid = CellGrid::new(id, side, cells).unwrap();
    let step = 1.0 / side as f64;
    let gts = objects
        .iter()
        .map(|&(class, idx)| {
            let (r, c) = (idx / side, idx % side);
            let (cx, cy) = ((c as f64 + 0.5) * step, (r as f64 + 0.5) * step);
            GroundTruthBox {
                image_id: id.into(),
                bbox: BBox::from_center(cx, cy, 0.5 * step, 0.5 * step),
                class_name: class.into(),
            }
        })
        .collect();
    (grid, gts)
}

pub fn random_model(rng: &mut ChaCha8Rng, fdim: usize, edim: usize) -> ProjectionModel {
    let w = (0..fdim * edim).map(|_| rng.random_range(-1.0..1.0)).collect();
    ProjectionModel::new(fdim, edim, w).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// W x with W row-major (embed_dim x feature_dim).
pub fn project(model: &ProjectionModel, x: &[f64]) -> Vec<f64> {
    model.weights.chunks(model.feature_dim).map(|row| dot(row, x)).collect()
}

/// Calibration objective written out directly: mask the simulated-unseen
/// reference entries, scale those classes' cosines by alpha, sum squared
/// errors over object cells.
pub fn calibration_objective(
    model: &ProjectionModel,
    grids: &[CellGrid],
    targets: &[CellTargets],
    seen: &EmbeddingSet,
    simulated: &BTreeSet<String>,
    alpha: f64,
) -> f64 {
    let masked_idx: Vec<usize> = simulated.iter().map(|c| seen.index_of(c).unwrap()).collect();
    let classes: Vec<(String, Vec<f64>)> = seen
        .iter()
        .map(|e| {
            let mut v = e.values.clone();
            for &i in &masked_idx {
                v[i] = 0.0;
            }
            (e.class_name.clone(), v)
        })
        .collect();
    let mut loss = 0.0;
    for (g, tg) in grids.iter().zip(targets) {
        for (&idx, target) in &tg.cells {
            let omega = project(model, &g.cells()[idx].feature);
            for (name, v) in &classes {
                let mut f = dot(&omega, v) / (norm(&omega) * norm(v));
                if simulated.contains(name) {
                    f *= alpha;
                }
                let t = if target.classes.contains(name) { 1.0 } else { 0.0 };
                loss += (t - f).powi(2);
            }
        }
    }
    loss
}

/// Grid search over `[lo, hi]` at `step`; ties keep the smaller alpha.
pub fn alpha_grid_oracle(objective: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (lo, objective(lo));
    for k in 1..=n {
        let a = lo + k as f64 * step;
        let v = objective(a);
        if v < best.1 {
            best = (a, v);
        }
    }
    best.0
}

/// AP by enumerating score thresholds. Each threshold re-runs the greedy
/// matching on the detections at or above it; the area is the sum over
/// recall steps of the best precision reached at that recall or beyond.
pub fn ap_by_thresholds(dets: &[Detection], gts: &[GroundTruthBox], iou_thresh: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut curve = Vec::new();
    for &t in &thresholds {
        let mut kept: Vec<&Detection> = dets.iter().filter(|d| d.score >= t).collect();
        kept.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.bbox.lex_cmp(&b.bbox))
                .then_with(|| a.image_id.cmp(&b.image_id))
        });
        let mut used = vec![false; gts.len()];
        let mut tp = 0usize;
        for d in &kept {
            let mut best: Option<(usize, f64)> = None;
            for (i, g) in gts.iter().enumerate() {
                if used[i] || g.image_id != d.image_id {
                    continue;
                }
                let o = iou(&d.bbox, &g.bbox).unwrap();
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((i, o));
                }
            }
            if let Some((i, o)) = best {
                if o >= iou_thresh {
                    used[i] = true;
                    tp += 1;
                }
            }
        }
        curve.push((tp as f64 / gts.len() as f64, tp as f64 / kept.len() as f64));
    }
    let mut recalls: Vec<f64> = curve.iter().map(|p| p.0).collect();
    recalls.sort_by(f64::total_cmp);
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = curve
            .iter()
            .filter(|q| q.0 >= r)
            .map(|q| q.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Embeddings of `classes` over themselves, from random word vectors.
pub fn random_seen_set(rng: &mut ChaCha8Rng, classes: &[String]) -> EmbeddingSet {
    let table = VectorTable::from_entries(
        5,
        classes
            .iter()
            .map(|c| (c.clone(), (0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())),
    )
    .unwrap();
    let refs = ReferenceSet::new(classes, &table, EmbeddingOptions::default()).unwrap();
    EmbeddingSet::build(classes, &refs, &table).unwrap()
}

/// Relative error `|analytic - numeric| / |numeric|` of the total-loss
/// gradient on `trials` random fixtures, using central differences.
pub fn gradient_errors(seed: u64, trials: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = names(&["horse", "dog", "cat"]);
    (0..trials)
        .map(|_| {
            let set = random_seen_set(&mut rng, &classes);
            let fdim = rng.random_range(2..5);
            let mut grids = Vec::new();
            let mut gts = Vec::new();
            for i in 0..2 {
                let objects = [
                    (classes[rng.random_range(0..3)].as_str(), rng.random_range(0..4)),
                    (classes[rng.random_range(0..3)].as_str(), rng.random_range(0..4)),
                ];
                let (g, b) = random_grid(&mut rng, &format!("img{i}"), 2, fdim, &objects);
                grids.push(g);
                gts.extend(b);
            }
            let targets = targets_for(&grids, &gts).unwrap();
            let model = random_model(&mut rng, fdim, classes.len());
            let weights = LossWeights {
                loc: rng.random_range(0.0..5.0),
                obj: rng.random_range(0.0..2.0),
                cls: rng.random_range(0.1..2.0),
            };
            let (_, grad) = total_loss_gradient(&grids, &targets, &model, &set, weights).unwrap();
            let h = 1e-6;
            let numeric: Vec<f64> = (0..grad.len())
                .map(|j| {
                    let mut plus = model.clone();
                    plus.weights[j] += h;
                    let mut minus = model.clone();
                    minus.weights[j] -= h;
                    let fp = total_loss(&grids, &targets, &plus, &set, weights).unwrap();
                    let fm = total_loss(&grids, &targets, &minus, &set, weights).unwrap();
                    (fp - fm) / (2.0 * h)
                })
                .collect();
            let diff = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            diff / norm(&numeric).max(1e-8)
        })
        .collect()
}

/// `(average_precision, oracle)` on `fixtures` random single-class sets of
/// at most 20 detections, with coarse scores so ties are common.
pub fn ap_pairs(seed: u64, fixtures: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = [
        BBox::new(0.0, 0.0, 0.4, 0.4),
        BBox::new(0.05, 0.0, 0.45, 0.4),
        BBox::new(0.5, 0.5, 0.9, 0.9),
        BBox::new(0.5, 0.1, 0.9, 0.4),
        BBox::new(0.1, 0.5, 0.4, 0.95),
    ];
    let images = ["a", "b", "c"];
    let mut out = Vec::new();
    for _ in 0..fixtures {
        let n_gt = rng.random_range(0..8);
        let n_det = rng.random_range(0..=20);
        let gts: Vec<GroundTruthBox> = (0..n_gt)
            .map(|_| GroundTruthBox {
                image_id: images[rng.random_range(0..3)].into(),
                bbox: slots[rng.random_range(0..slots.len())],
                class_name: "zebra".into(),
            })
            .collect();
        let dets: Vec<Detection> = (0..n_det)
            .map(|_| Detection {
                image_id: images[rng.random_range(0..3)].into(),
                bbox: slots[rng.random_range(0..slots.len())],
                class_name: "zebra".into(),
                score: rng.random_range(1..10) as f64 / 10.0,
            })
            .collect();
        for thr in [0.5, 0.75] {
            out.push((average_precision(&dets, &gts, thr).unwrap(), ap_by_thresholds(&dets, &gts, thr)));
        }
    }
    out
}
