//! Zero-shot object detection with similarity-based class embeddings,
//! post-hoc calibration of unseen class scores, and template captioning
//! driven by the detections.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod detection;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod synthetic;
pub mod templates;

pub use error::{Error, Result};
pub use geometry::BBox;
