//! Per-image cell grids, ground truth, detections and their file formats.
//!
//! Feature-grid text format, one record per image:
//!
//! ```text
//! grid <image_id> <S> <F>
//! <f_1> .. <f_F> | <cx> <cy> <w> <h> <objectness>     (S*S lines, row-major)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored between records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DEFAULT_GRID_SIDE: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub feature: Vec<f64>,
    /// Predicted box as (cx, cy, w, h) in normalized image coordinates.
    pub box_pred: [f64; 4],
    pub objectness: f64,
}

impl Cell {
    pub fn predicted_box(&self) -> BBox {
        let [cx, cy, w, h] = self.box_pred;
        BBox::from_center(cx, cy, w, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub image_id: String,
    side: usize,
    cells: Vec<Cell>,
}

impl CellGrid {
    pub fn new(image_id: impl Into<String>, side: usize, cells: Vec<Cell>) -> Result<Self> {
        let image_id = image_id.into();
        if side == 0 {
            return Err(Error::InvalidArgument("grid side must be positive".into()));
        }
        if image_id.is_empty() || image_id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad image id `{image_id}`")));
        }
        if cells.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: side * side,
                actual: cells.len(),
            });
        }
        let dim = cells[0].feature.len();
        for c in &cells {
            if c.feature.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.feature.len(),
                });
            }
            let [cx, cy, w, h] = c.box_pred;
            if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) || w < 0.0 || h < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{image_id}: box prediction {:?} out of range",
                    c.box_pred
                )));
            }
            if !(0.0..=1.0).contains(&c.objectness) {
                return Err(Error::InvalidArgument(format!(
                    "{image_id}: objectness {} out of [0, 1]",
                    c.objectness
                )));
            }
        }
        Ok(CellGrid {
            image_id,
            side,
            cells,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn feature_dim(&self) -> usize {
        self.cells[0].feature.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Row-major index of the cell containing the normalized point (x, y).
    pub fn cell_index(&self, x: f64, y: f64) -> usize {
        let s = self.side;
        let col = ((x * s as f64).floor().max(0.0) as usize).min(s - 1);
        let row = ((y * s as f64).floor().max(0.0) as usize).min(s - 1);
        row * s + col
    }
}

/// Annotated object: the ground truth currency of training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_name: String,
    pub score: f64,
}

/// Targets for one image: the object cells and what they contain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellTargets {
    pub cells: BTreeMap<usize, CellTarget>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTarget {
    /// Classes with target 1 in this cell; all other classes have target 0.
    pub classes: BTreeSet<String>,
    /// Box the cell is responsible for (first annotation assigned to it).
    pub gt_box: BBox,
}

impl CellTargets {
    /// Assigns each annotation to the cell containing its center.
    pub fn from_annotations<'a, I>(grid: &CellGrid, gts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a GroundTruthBox>,
    {
        let mut cells: BTreeMap<usize, CellTarget> = BTreeMap::new();
        for gt in gts {
            gt.bbox.validate()?;
            let [cx, cy, _, _] = gt.bbox.center_size();
            let idx = grid.cell_index(cx, cy);
            cells
                .entry(idx)
                .or_insert_with(|| CellTarget {
                    classes: BTreeSet::new(),
                    gt_box: gt.bbox,
                })
                .classes
                .insert(gt.class_name.clone());
        }
        Ok(CellTargets { cells })
    }

    pub fn is_object(&self, cell: usize) -> bool {
        self.cells.contains_key(&cell)
    }
}

/// Groups annotations by image id.
pub fn group_by_image(gts: &[GroundTruthBox]) -> BTreeMap<&str, Vec<&GroundTruthBox>> {
    let mut map: BTreeMap<&str, Vec<&GroundTruthBox>> = BTreeMap::new();
    for gt in gts {
        map.entry(gt.image_id.as_str()).or_default().push(gt);
    }
    map
}

pub fn write_grids(grids: &[CellGrid]) -> String {
    let mut out = String::new();
    for g in grids {
        let _ = writeln!(out, "grid {} {} {}", g.image_id, g.side, g.feature_dim());
        for c in &g.cells {
            let feats: Vec<String> = c.feature.iter().map(|x| x.to_string()).collect();
            let [cx, cy, w, h] = c.box_pred;
            let _ = writeln!(
                out,
                "{} | {} {} {} {} {}",
                feats.join(" "),
                cx,
                cy,
                w,
                h,
                c.objectness
            );
        }
    }
    out
}

pub fn parse_grids(text: &str, path: &Path) -> Result<Vec<CellGrid>> {
    let mut grids = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    while let Some((lineno, header)) = lines.next() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "grid" {
            return Err(Error::parse(path, lineno, "expected `grid <image_id> <S> <F>`"));
        }
        let side: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, "bad grid side"))?;
        let fdim: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, "bad feature dimension"))?;
        if side == 0 || fdim == 0 {
            return Err(Error::parse(path, lineno, "grid side and feature dimension must be positive"));
        }
        let mut cells = Vec::with_capacity(side * side);
        for _ in 0..side * side {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, lineno, "truncated grid record"))?;
            cells.push(parse_cell(line, fdim).map_err(|m| Error::parse(path, ln, m))?);
        }
        let grid = CellGrid::new(fields[1], side, cells)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        grids.push(grid);
    }
    Ok(grids)
}

fn parse_cell(line: &str, fdim: usize) -> std::result::Result<Cell, String> {
    let (feat, pred) = line
        .split_once('|')
        .ok_or_else(|| "missing `|` separator".to_string())?;
    let nums = |s: &str| -> std::result::Result<Vec<f64>, String> {
        s.split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|e| format!("bad number `{x}`: {e}")))
            .collect()
    };
    let feature = nums(feat)?;
    if feature.len() != fdim {
        return Err(format!("expected {fdim} features, found {}", feature.len()));
    }
    let pred = nums(pred)?;
    if pred.len() != 5 {
        return Err(format!("expected 5 prediction values, found {}", pred.len()));
    }
    if feature.iter().chain(&pred).any(|x| !x.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(Cell {
        feature,
        box_pred: [pred[0], pred[1], pred[2], pred[3]],
        objectness: pred[4],
    })
}

pub fn load_grids(path: impl AsRef<Path>) -> Result<Vec<CellGrid>> {
    let path = path.as_ref();
    parse_grids(&crate::io::read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(f: Vec<f64>) -> Cell {
        Cell {
            feature: f,
            box_pred: [0.5, 0.5, 0.2, 0.3],
            objectness: 0.7,
        }
    }

    #[test]
    fn grid_text_round_trip() {
        let g = CellGrid::new(
            "img1",
            2,
            (0..4).map(|i| cell(vec![i as f64 * 0.1, -1.5e-3])).collect(),
        )
        .unwrap();
        let text = write_grids(&[g.clone(), g.clone()]);
        let back = parse_grids(&text, Path::new("x")).unwrap();
        assert_eq!(back, vec![g.clone(), g]);
    }

    #[test]
    fn rejects_inconsistent_features() {
        let cells = vec![cell(vec![1.0]), cell(vec![1.0, 2.0]), cell(vec![1.0]), cell(vec![1.0])];
        assert!(CellGrid::new("a", 2, cells).is_err());
    }

    #[test]
    fn truncated_record_is_an_error() {
        let text = "grid a 2 1\n1 | 0.5 0.5 0.1 0.1 0.5\n";
        assert!(matches!(parse_grids(text, Path::new("x")), Err(Error::Parse { .. })));
    }

    #[test]
    fn targets_assigned_by_center() {
        let g = CellGrid::new("a", 2, (0..4).map(|_| cell(vec![1.0])).collect()).unwrap();
        let gts = vec![
            GroundTruthBox {
                image_id: "a".into(),
                bbox: BBox::new(0.6, 0.1, 0.9, 0.3),
                class_name: "bus".into(),
            },
            GroundTruthBox {
                image_id: "a".into(),
                bbox: BBox::new(0.0, 0.6, 0.2, 1.0),
                class_name: "cat".into(),
            },
        ];
        let t = CellTargets::from_annotations(&g, &gts).unwrap();
        assert_eq!(t.cells.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert!(t.cells[&1].classes.contains("bus"));
    }

    #[test]
    fn annotation_json_shape() {
        let gt: GroundTruthBox =
            serde_json::from_str(r#"{"image_id":"a","box":[0,0,1,1],"class":"zebra"}"#).unwrap();
        assert_eq!(gt.bbox, BBox::new(0.0, 0.0, 1.0, 1.0));
        let back = serde_json::to_string(&gt).unwrap();
        assert_eq!(back, r#"{"image_id":"a","box":[0.0,0.0,1.0,1.0],"class":"zebra"}"#);
    }
}
