//! Zero-shot grid detector: linear cell embeddings scored against class
//! embeddings by cosine, trained with a YOLO-style squared-error loss.

mod decode;
mod grid;
mod model;

pub use decode::{
    cell_scores, decode_detections, non_max_suppression, sort_detections, DecodeParams,
    CAPTION_CONF_THRESHOLD,
};
pub use grid::{
    group_by_image, load_grids, parse_grids, write_grids, Cell, CellGrid, CellTarget, CellTargets,
    Detection, GroundTruthBox, DEFAULT_GRID_SIDE,
};
pub use model::{
    compatibility_score, cosine, localization_loss, objectness_loss, recognition_loss, total_loss,
    total_loss_gradient, train, LossWeights, ProjectionModel, TrainConfig, TrainOutcome,
};

pub(crate) use model::UnitClasses;

/// Builds per-image targets for `grids` from a flat annotation list.
pub fn targets_for(grids: &[CellGrid], gts: &[GroundTruthBox]) -> crate::Result<Vec<CellTargets>> {
    let by_image = group_by_image(gts);
    grids
        .iter()
        .map(|g| {
            let boxes = by_image.get(g.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            CellTargets::from_annotations(g, boxes.iter().copied())
        })
        .collect()
}
