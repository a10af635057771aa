//! Detection and caption evaluation.

mod caption;
mod detection;

pub use caption::{
    bleu, caption_f1, evaluate_captions, mentions, meteor_lite, rouge_l, stem, tokenize, BleuStats,
    CapEvalReport, F1Report, SynonymTable, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA, ROUGE_BETA,
};
pub use detection::{
    average_precision, evaluate_detection, harmonic_mean, DetEvalReport, DEFAULT_IOU_THRESHOLD,
};
pub use crate::geometry::iou;
