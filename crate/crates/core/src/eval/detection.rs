use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, GroundTruthBox};
use crate::error::{Error, Result};
use crate::geometry::{iou, rank_cmp};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if a < 0.0 || b < 0.0 || a.is_nan() || b.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "harmonic mean needs non-negative inputs, got ({a}, {b})"
        )));
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

/// Precision/recall after each rank cutoff, one point per distinct score.
fn precision_recall(dets: &[Detection], gts: &[GroundTruthBox], iou_thresh: f64) -> Result<Vec<(f64, f64)>> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| {
        rank_cmp(a.score, &a.bbox, b.score, &b.bbox).then_with(|| a.image_id.cmp(&b.image_id))
    });
    let mut by_image: BTreeMap<&str, Vec<(usize, &GroundTruthBox)>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push((i, g));
    }
    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (k, det) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        if let Some(cands) = by_image.get(det.image_id.as_str()) {
            for &(gi, g) in cands {
                let o = iou(&det.bbox, &g.bbox)?;
                if !matched[gi] && best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
        }
        if let Some((gi, o)) = best {
            if o >= iou_thresh {
                matched[gi] = true;
                tp += 1;
            }
        }
        let tie_continues = order.get(k + 1).is_some_and(|n| n.score == det.score);
        if !tie_continues {
            let n = (k + 1) as f64;
            points.push((tp as f64 / gts.len() as f64, tp as f64 / n));
        }
    }
    Ok(points)
}

/// All-point interpolated average precision for a single class.
///
/// Detections are matched greedily in descending score order to the
/// unmatched ground truth box of highest IoU in the same image; a match
/// needs `IoU >= iou_thresh`. Detections with equal scores enter the curve
/// together.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruthBox], iou_thresh: f64) -> Result<f64> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou threshold {iou_thresh} outside (0, 1)"
        )));
    }
    for g in gts {
        g.bbox.validate()?;
    }
    if gts.is_empty() {
        log::warn!("average precision with no ground truth ({} detections): defined as 0", dets.len());
        return Ok(0.0);
    }
    let points = precision_recall(dets, gts, iou_thresh)?;
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for ((recall, _), p) in points.iter().zip(&envelope) {
        ap += (recall - prev_recall) * p;
        prev_recall = *recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEvalReport {
    pub per_class_ap: BTreeMap<String, f64>,
    pub u_map: f64,
    pub s_map: f64,
    pub hm: f64,
    pub iou_threshold: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DetEvalReport {
    pub fn to_table(&self, unseen: &BTreeSet<String>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>6} {:>8}", "class", "split", "AP(%)");
        for (c, ap) in &self.per_class_ap {
            let split = if unseen.contains(c) { "U" } else { "S" };
            let _ = writeln!(out, "{:<20} {:>6} {:>8.2}", c, split, ap * 100.0);
        }
        let _ = writeln!(
            out,
            "U-mAP {:.2}  S-mAP {:.2}  HM {:.2}  (IoU {})",
            self.u_map * 100.0,
            self.s_map * 100.0,
            self.hm * 100.0,
            self.iou_threshold
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Per-class AP with separate seen and unseen means and their harmonic mean.
pub fn evaluate_detection(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    seen: &BTreeSet<String>,
    unseen: &BTreeSet<String>,
    iou_thresh: f64,
) -> Result<DetEvalReport> {
    if let Some(c) = seen.intersection(unseen).next() {
        return Err(Error::InvalidArgument(format!("class `{c}` is both seen and unseen")));
    }
    let known = |c: &str| seen.contains(c) || unseen.contains(c);
    if let Some(d) = dets.iter().find(|d| !known(&d.class_name)) {
        return Err(Error::UnknownClass(d.class_name.clone()));
    }
    if let Some(g) = gts.iter().find(|g| !known(&g.class_name)) {
        return Err(Error::UnknownClass(g.class_name.clone()));
    }

    let mut warnings = Vec::new();
    let mut per_class_ap = BTreeMap::new();
    for class in seen.iter().chain(unseen) {
        let cd: Vec<Detection> = dets.iter().filter(|d| &d.class_name == class).cloned().collect();
        let cg: Vec<GroundTruthBox> = gts.iter().filter(|g| &g.class_name == class).cloned().collect();
        if cg.is_empty() {
            warnings.push(format!("class `{class}` has no ground truth; AP set to 0"));
        }
        per_class_ap.insert(class.clone(), average_precision(&cd, &cg, iou_thresh)?);
    }
    let group = |set: &BTreeSet<String>, name: &str, warnings: &mut Vec<String>| {
        let aps: Vec<f64> = set.iter().map(|c| per_class_ap[c]).collect();
        mean_of(&aps).unwrap_or_else(|| {
            warnings.push(format!("no {name} classes; mAP set to 0"));
            0.0
        })
    };
    let u_map = group(unseen, "unseen", &mut warnings);
    let s_map = group(seen, "seen", &mut warnings);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(DetEvalReport {
        hm: harmonic_mean(u_map, s_map)?,
        per_class_ap,
        u_map,
        s_map,
        iou_threshold: iou_thresh,
        warnings,
    })
}
