//! Linear cell-embedding projection, cosine compatibility and the detector
//! losses with their analytic gradient.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{CellGrid, CellTargets};
use crate::embedding::{dot, l2_norm, ClassEmbedding, EmbeddingSet};
use crate::error::{Error, Result};
use crate::geometry::overlap;

/// Cosine between a cell embedding and a class embedding.
pub fn compatibility_score(cell_embedding: &[f64], class_embedding: &ClassEmbedding) -> Result<f64> {
    cosine(cell_embedding, &class_embedding.values)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Maps F-dimensional cell features to E-dimensional cell embeddings.
///
/// Weights are stored row-major as E rows of F entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

impl ProjectionModel {
    pub fn new(feature_dim: usize, embed_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if feature_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if weights.len() != feature_dim * embed_dim {
            return Err(Error::DimensionMismatch {
                expected: feature_dim * embed_dim,
                actual: weights.len(),
            });
        }
        Ok(ProjectionModel {
            feature_dim,
            embed_dim,
            weights,
            final_loss: None,
        })
    }

    pub fn zeros(feature_dim: usize, embed_dim: usize) -> Self {
        ProjectionModel {
            feature_dim,
            embed_dim,
            weights: vec![0.0; feature_dim * embed_dim],
            final_loss: None,
        }
    }

    /// Uniform initialization in `±1/sqrt(F)` from a seeded stream.
    pub fn random(feature_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let weights = (0..feature_dim * embed_dim)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        ProjectionModel {
            feature_dim,
            embed_dim,
            weights,
            final_loss: None,
        }
    }

    pub fn project(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: feature.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.feature_dim)
            .map(|row| dot(row, feature))
            .collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: ProjectionModel = crate::io::read_json(path)?;
        ProjectionModel::new(m.feature_dim, m.embed_dim, m.weights.clone())?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub(crate) fn check_compatible(&self, grids: &[CellGrid], embeddings: &EmbeddingSet) -> Result<()> {
        if let Some(e) = embeddings.dim() {
            if e != self.embed_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.embed_dim,
                    actual: e,
                });
            }
        }
        if let Some(g) = grids.iter().find(|g| g.feature_dim() != self.feature_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: g.feature_dim(),
            });
        }
        Ok(())
    }
}

/// Unit-normalized class embeddings, ready for repeated cosine scoring.
pub(crate) struct UnitClasses {
    pub names: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl UnitClasses {
    pub fn new(embeddings: &EmbeddingSet) -> Result<Self> {
        let mut names = Vec::with_capacity(embeddings.len());
        let mut vectors = Vec::with_capacity(embeddings.len());
        for e in embeddings {
            let n = l2_norm(&e.values);
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            names.push(e.class_name.clone());
            vectors.push(e.values.iter().map(|x| x / n).collect());
        }
        Ok(UnitClasses { names, vectors })
    }

    /// Cosines of one cell embedding against every class.
    pub fn scores(&self, omega: &[f64]) -> Result<Vec<f64>> {
        let n = l2_norm(omega);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(self
            .vectors
            .iter()
            .map(|v| (dot(omega, v) / n).clamp(-1.0, 1.0))
            .collect())
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.names.iter().position(|c| c == class)
    }

    /// 0/1 target vector for a cell, rejecting classes outside the set.
    pub fn targets(&self, classes: &std::collections::BTreeSet<String>) -> Result<Vec<f64>> {
        let mut t = vec![0.0; self.names.len()];
        for c in classes {
            let i = self.index_of(c).ok_or_else(|| Error::UnknownClass(c.clone()))?;
            t[i] = 1.0;
        }
        Ok(t)
    }
}

fn check_pairing(grids: &[CellGrid], targets: &[CellTargets]) -> Result<()> {
    if grids.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: grids.len(),
            actual: targets.len(),
        });
    }
    Ok(())
}

/// Sum over images and object cells of the squared error between 0/1 class
/// targets and cosine compatibility scores.
pub fn recognition_loss(
    grids: &[CellGrid],
    targets: &[CellTargets],
    model: &ProjectionModel,
    embeddings: &EmbeddingSet,
) -> Result<f64> {
    check_pairing(grids, targets)?;
    model.check_compatible(grids, embeddings)?;
    let classes = UnitClasses::new(embeddings)?;
    let mut loss = 0.0;
    for (grid, tg) in grids.iter().zip(targets) {
        for (&idx, target) in &tg.cells {
            let t = classes.targets(&target.classes)?;
            let omega = model.project(&grid.cells()[idx].feature)?;
            let f = classes.scores(&omega)?;
            loss += t.iter().zip(&f).map(|(t, f)| (t - f).powi(2)).sum::<f64>();
        }
    }
    Ok(loss)
}

/// Weights of the localization, objectness and recognition terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub loc: f64,
    pub obj: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            loc: 5.0,
            obj: 1.0,
            cls: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.loc, self.obj, self.cls].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("loss weights must be >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Localization error over object cells: squared error of (cx, cy, w, h).
pub fn localization_loss(grids: &[CellGrid], targets: &[CellTargets]) -> Result<f64> {
    check_pairing(grids, targets)?;
    let mut loss = 0.0;
    for (grid, tg) in grids.iter().zip(targets) {
        for (&idx, target) in &tg.cells {
            let gt = target.gt_box.center_size();
            let pred = grid.cells()[idx].box_pred;
            loss += pred.iter().zip(&gt).map(|(p, g)| (p - g).powi(2)).sum::<f64>();
        }
    }
    Ok(loss)
}

/// Objectness error over all cells; object cells target the IoU of their
/// predicted box with the assigned ground truth, other cells target 0.
pub fn objectness_loss(grids: &[CellGrid], targets: &[CellTargets]) -> Result<f64> {
    check_pairing(grids, targets)?;
    let mut loss = 0.0;
    for (grid, tg) in grids.iter().zip(targets) {
        for (idx, cell) in grid.cells().iter().enumerate() {
            let target = tg
                .cells
                .get(&idx)
                .map_or(0.0, |t| overlap(&cell.predicted_box(), &t.gt_box));
            loss += (cell.objectness - target).powi(2);
        }
    }
    Ok(loss)
}

pub fn total_loss(
    grids: &[CellGrid],
    targets: &[CellTargets],
    model: &ProjectionModel,
    embeddings: &EmbeddingSet,
    weights: LossWeights,
) -> Result<f64> {
    weights.validate()?;
    let mut loss = 0.0;
    if weights.loc != 0.0 {
        loss += weights.loc * localization_loss(grids, targets)?;
    }
    if weights.obj != 0.0 {
        loss += weights.obj * objectness_loss(grids, targets)?;
    }
    if weights.cls != 0.0 {
        loss += weights.cls * recognition_loss(grids, targets, model, embeddings)?;
    }
    Ok(loss)
}

/// Total loss and its gradient with respect to the projection weights.
///
/// Box and objectness predictions are inputs, so only the recognition term
/// depends on the weights.
pub fn total_loss_gradient(
    grids: &[CellGrid],
    targets: &[CellTargets],
    model: &ProjectionModel,
    embeddings: &EmbeddingSet,
    weights: LossWeights,
) -> Result<(f64, Vec<f64>)> {
    weights.validate()?;
    check_pairing(grids, targets)?;
    model.check_compatible(grids, embeddings)?;
    let classes = UnitClasses::new(embeddings)?;
    let fdim = model.feature_dim;
    let mut grad = vec![0.0; model.weights.len()];
    let mut cls_loss = 0.0;
    let mut d_omega = vec![0.0; model.embed_dim];
    for (grid, tg) in grids.iter().zip(targets) {
        for (&idx, target) in &tg.cells {
            let x = &grid.cells()[idx].feature;
            let t = classes.targets(&target.classes)?;
            let omega = model.project(x)?;
            let norm = l2_norm(&omega);
            if norm == 0.0 {
                return Err(Error::ZeroNorm);
            }
            d_omega.iter_mut().for_each(|v| *v = 0.0);
            for (psi, &tc) in classes.vectors.iter().zip(&t) {
                let f = dot(&omega, psi) / norm;
                let r = tc - f;
                cls_loss += r * r;
                // d f / d omega = psi / |omega| - f * omega / |omega|^2
                let coeff = -2.0 * r;
                for ((d, p), o) in d_omega.iter_mut().zip(psi).zip(&omega) {
                    *d += coeff * (p / norm - f * o / (norm * norm));
                }
            }
            for (row, d) in grad.chunks_exact_mut(fdim).zip(&d_omega) {
                for (g, xj) in row.iter_mut().zip(x) {
                    *g += weights.cls * d * xj;
                }
            }
        }
    }
    let mut loss = weights.cls * cls_loss;
    if weights.loc != 0.0 {
        loss += weights.loc * localization_loss(grids, targets)?;
    }
    if weights.obj != 0.0 {
        loss += weights.obj * objectness_loss(grids, targets)?;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Images per gradient step.
    pub batch: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs: 160,
            batch: 32,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ProjectionModel,
    /// Total loss over the whole set after each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch gradient descent on the total loss.
pub fn train(
    grids: &[CellGrid],
    targets: &[CellTargets],
    embeddings: &EmbeddingSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if grids.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument("no class embeddings to train against".into()));
    }
    if config.batch == 0 || !(config.lr.is_finite() && config.lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "batch must be positive and lr finite and positive: {config:?}"
        )));
    }
    check_pairing(grids, targets)?;
    let classes = UnitClasses::new(embeddings)?;
    for tg in targets {
        for t in tg.cells.values() {
            classes.targets(&t.classes)?;
        }
    }
    let embed_dim = embeddings.dim().unwrap_or(0);
    let mut model = ProjectionModel::random(grids[0].feature_dim(), embed_dim, config.seed);
    model.check_compatible(grids, embeddings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..grids.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let bg: Vec<CellGrid> = chunk.iter().map(|&i| grids[i].clone()).collect();
            let bt: Vec<CellTargets> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let (loss, grad) = total_loss_gradient(&bg, &bt, &model, embeddings, config.weights)
                .map_err(|e| match e {
                    Error::ZeroNorm => Error::Divergence {
                        epoch,
                        loss: f64::NAN,
                    },
                    e => e,
                })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= config.lr * g;
            }
        }
        let loss = total_loss(grids, targets, &model, embeddings, config.weights)
            .map_err(|e| match e {
                Error::ZeroNorm => Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                },
                e => e,
            })?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        log::debug!("epoch {epoch}: loss {loss}");
        history.push(loss);
    }
    model.final_loss = history.last().copied();
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}
