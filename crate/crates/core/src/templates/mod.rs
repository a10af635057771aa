mod bank;
mod lexicon;

pub use bank::{
    abstract_captions, exclude_classes, fill_slots, select_template, template_score, CaptionTemplate,
    CorpusEntry, FilledCaption, Selection, SlotFill, TemplateBank, TemplateToken,
};
pub use lexicon::{
    ClassLexicon, Determiner, FormMatch, LexiconEntry, SurfaceForms, CATEGORY_GROUPS, GENERIC_GROUP,
    GENERIC_WORD,
};

use serde::{Deserialize, Serialize};

use crate::calibration::AlphaConfig;
use crate::detection::{decode_detections, CellGrid, DecodeParams, Detection, ProjectionModel};
use crate::embedding::EmbeddingSet;
use crate::error::Result;

/// One generated caption with the detections and template behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    pub template: String,
    pub provenance: Vec<SlotFill>,
    #[serde(default)]
    pub low_confidence: bool,
    #[serde(default)]
    pub degraded: bool,
}

/// Captions from an already decoded detection set.
pub fn caption_detections(
    image_id: &str,
    detections: &[Detection],
    bank: &TemplateBank,
    lexicon: &ClassLexicon,
) -> Result<CaptionRecord> {
    let sel = select_template(bank, detections, lexicon)?;
    let filled = fill_slots(sel.template, detections, lexicon)?;
    Ok(CaptionRecord {
        image_id: image_id.to_string(),
        degraded: filled.degraded(),
        caption: filled.sentence,
        template: sel.template.to_string(),
        provenance: filled.provenance,
        low_confidence: sel.low_confidence,
    })
}

/// Detect, pick a template, fill it.
#[allow(clippy::too_many_arguments)]
pub fn caption_image(
    grid: &CellGrid,
    model: &ProjectionModel,
    embeddings: &EmbeddingSet,
    alpha: Option<&AlphaConfig>,
    bank: &TemplateBank,
    lexicon: &ClassLexicon,
    params: &DecodeParams,
) -> Result<CaptionRecord> {
    let dets = decode_detections(grid, model, embeddings, params, alpha)?;
    caption_detections(&grid.image_id, &dets, bank, lexicon)
}
