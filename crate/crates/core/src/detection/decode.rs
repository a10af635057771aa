use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grid::{CellGrid, Detection};
use super::model::{ProjectionModel, UnitClasses};
use crate::calibration::AlphaConfig;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::geometry::{overlap, rank_cmp};

/// Class confidence threshold used ahead of caption generation.
pub const CAPTION_CONF_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            conf_threshold: CAPTION_CONF_THRESHOLD,
            nms_iou: 0.5,
        }
    }
}

/// Per-class compatibility of every cell, with unseen classes scaled by
/// alpha when a config is given. Rows follow cell order, columns follow
/// `embeddings` order.
pub fn cell_scores(
    grid: &CellGrid,
    model: &ProjectionModel,
    embeddings: &EmbeddingSet,
    alpha: Option<&AlphaConfig>,
) -> Result<Vec<Vec<f64>>> {
    model.check_compatible(std::slice::from_ref(grid), embeddings)?;
    let classes = UnitClasses::new(embeddings)?;
    let factors = alpha_factors(&classes.names, alpha);
    grid.cells()
        .iter()
        .map(|cell| {
            let omega = model.project(&cell.feature)?;
            let mut s = classes.scores(&omega)?;
            for (v, f) in s.iter_mut().zip(&factors) {
                *v *= f;
            }
            Ok(s)
        })
        .collect()
}

fn alpha_factors(names: &[String], alpha: Option<&AlphaConfig>) -> Vec<f64> {
    names
        .iter()
        .map(|c| match alpha {
            Some(cfg) if cfg.unseen.contains(c) => cfg.alpha,
            _ => 1.0,
        })
        .collect()
}

/// Decodes one grid into thresholded, per-class NMS-filtered detections.
///
/// Each cell proposes its best class; its confidence is
/// `objectness * max(0, score)` where unseen scores are alpha-scaled first.
pub fn decode_detections(
    grid: &CellGrid,
    model: &ProjectionModel,
    embeddings: &EmbeddingSet,
    params: &DecodeParams,
    alpha: Option<&AlphaConfig>,
) -> Result<Vec<Detection>> {
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument("active class set is empty".into()));
    }
    if !(0.0..=1.0).contains(&params.nms_iou) {
        return Err(Error::InvalidArgument(format!(
            "nms_iou {} outside [0, 1]",
            params.nms_iou
        )));
    }
    if let Some(cfg) = alpha {
        cfg.validate()?;
    }
    model.check_compatible(std::slice::from_ref(grid), embeddings)?;
    let classes = UnitClasses::new(embeddings)?;
    let factors = alpha_factors(&classes.names, alpha);

    let mut candidates = Vec::new();
    for cell in grid.cells() {
        if cell.objectness <= 0.0 {
            continue;
        }
        let bbox = cell.predicted_box().clamp_unit();
        if !bbox.is_well_formed() {
            continue;
        }
        let omega = model.project(&cell.feature)?;
        let scores = classes.scores(&omega)?;
        let mut best: Option<(usize, f64)> = None;
        for (k, (s, f)) in scores.iter().zip(&factors).enumerate() {
            let v = s * f;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        let (k, v) = best.expect("non-empty class set");
        let score = cell.objectness * v.max(0.0);
        if score > 0.0 && score >= params.conf_threshold {
            candidates.push(Detection {
                image_id: grid.image_id.clone(),
                bbox,
                class_name: classes.names[k].clone(),
                score,
            });
        }
    }
    let mut kept = non_max_suppression(candidates, params.nms_iou);
    sort_detections(&mut kept);
    Ok(kept)
}

/// Sorts by score descending, then box corners, then class name.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        rank_cmp(a.score, &a.bbox, b.score, &b.bbox).then_with(|| a.class_name.cmp(&b.class_name))
    });
}

/// Greedy per-class NMS: keep the best box, drop same-class boxes whose IoU
/// with it exceeds `iou_threshold`, repeat.
pub fn non_max_suppression(dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let mut by_class: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by_class.entry(d.class_name.clone()).or_default().push(d);
    }
    let mut out = Vec::new();
    for (_, mut group) in by_class {
        group.sort_by(|a, b| rank_cmp(a.score, &a.bbox, b.score, &b.bbox));
        let mut kept: Vec<Detection> = Vec::new();
        for d in group {
            if kept.iter().all(|k| overlap(&k.bbox, &d.bbox) <= iou_threshold) {
                kept.push(d);
            }
        }
        out.extend(kept);
    }
    out
}
