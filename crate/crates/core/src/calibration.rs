//! Alpha scaling of unseen-class scores for generalized zero-shot inference,
//! and learning alpha on a simulated-unseen split of the seen classes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detection::{CellGrid, CellTargets, ProjectionModel, UnitClasses};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaConfig {
    pub alpha: f64,
    pub unseen: BTreeSet<String>,
}

impl AlphaConfig {
    pub fn new<I, S>(alpha: f64, unseen: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let cfg = AlphaConfig {
            alpha,
            unseen: unseen.into_iter().map(Into::into).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Checks that no unseen class doubles as a seen reference class.
    pub fn check_disjoint(&self, seen: &[String]) -> Result<()> {
        match seen.iter().find(|c| self.unseen.contains(*c)) {
            Some(c) => Err(Error::InvalidArgument(format!(
                "class `{c}` is both seen and unseen"
            ))),
            None => Ok(()),
        }
    }
}

/// Multiplies unseen-class scores by alpha; seen scores pass through.
pub fn apply_alpha(scores: &BTreeMap<String, f64>, cfg: &AlphaConfig) -> BTreeMap<String, f64> {
    scores
        .iter()
        .map(|(c, &s)| {
            let v = if cfg.unseen.contains(c) { cfg.alpha * s } else { s };
            (c.clone(), v)
        })
        .collect()
}

/// Bracket and tolerance for the alpha search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

impl Default for AlphaSearch {
    fn default() -> Self {
        AlphaSearch {
            lo: 0.1,
            hi: 10.0,
            tol: 1e-3,
        }
    }
}

impl AlphaSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo <= self.hi && self.hi.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha search needs 0 < lo <= hi and tol > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
///
/// Returns the midpoint of the final bracket, or `lo` when `lo` scores no
/// worse than it (flat objectives resolve to the lower bound).
pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    if f(lo) <= f(x) {
        lo
    } else {
        x
    }
}

/// Frozen-model cosine scores for the calibration objective.
struct CalibrationTerms {
    /// Per object cell: (targets, masked cosines).
    cells: Vec<(Vec<f64>, Vec<f64>)>,
    scaled: Vec<bool>,
}

impl CalibrationTerms {
    fn new(
        model: &ProjectionModel,
        grids: &[CellGrid],
        targets: &[CellTargets],
        seen: &EmbeddingSet,
        simulated_unseen: &BTreeSet<String>,
    ) -> Result<Self> {
        if grids.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: grids.len(),
                actual: targets.len(),
            });
        }
        let indices = simulated_unseen
            .iter()
            .map(|c| seen.index_of(c).ok_or_else(|| Error::UnknownClass(c.clone())))
            .collect::<Result<BTreeSet<usize>>>()?;
        let masked = seen.masked(&indices)?;
        model.check_compatible(grids, &masked)?;
        let classes = UnitClasses::new(&masked)?;
        let scaled: Vec<bool> = classes.names.iter().map(|c| simulated_unseen.contains(c)).collect();

        let mut cells = Vec::new();
        let mut has_sim = false;
        for (grid, tg) in grids.iter().zip(targets) {
            for (&idx, target) in &tg.cells {
                let t = classes.targets(&target.classes)?;
                has_sim |= t.iter().zip(&scaled).any(|(t, s)| *s && *t > 0.0);
                let omega = model.project(&grid.cells()[idx].feature)?;
                cells.push((t, classes.scores(&omega)?));
            }
        }
        if !has_sim {
            return Err(Error::NoSimulatedUnseen);
        }
        Ok(CalibrationTerms { cells, scaled })
    }

    fn loss(&self, alpha: f64) -> f64 {
        self.cells
            .iter()
            .map(|(t, g)| {
                t.iter()
                    .zip(g)
                    .zip(&self.scaled)
                    .map(|((t, g), s)| {
                        let f = if *s { alpha * g } else { *g };
                        (t - f).powi(2)
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Learns alpha with the model frozen.
///
/// `seen` must list the seen classes in reference order, so a class's
/// position is also the index of its own similarity entry. The reference
/// entries of `simulated_unseen` are masked in every embedding, their scores
/// are scaled by alpha, and alpha minimizes the recognition loss over the
/// calibration cells.
pub fn learn_alpha(
    model: &ProjectionModel,
    grids: &[CellGrid],
    targets: &[CellTargets],
    seen: &EmbeddingSet,
    simulated_unseen: &BTreeSet<String>,
    search: &AlphaSearch,
) -> Result<f64> {
    search.validate()?;
    let terms = CalibrationTerms::new(model, grids, targets, seen, simulated_unseen)?;
    Ok(golden_section_min(|a| terms.loss(a), search.lo, search.hi, search.tol))
}

/// The calibration objective itself, for inspection and plotting.
pub fn calibration_loss(
    model: &ProjectionModel,
    grids: &[CellGrid],
    targets: &[CellTargets],
    seen: &EmbeddingSet,
    simulated_unseen: &BTreeSet<String>,
    alphas: &[f64],
) -> Result<Vec<f64>> {
    let terms = CalibrationTerms::new(model, grids, targets, seen, simulated_unseen)?;
    Ok(alphas.iter().map(|&a| terms.loss(a)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scores() -> BTreeMap<String, f64> {
        [("bus".to_string(), 0.4), ("car".to_string(), 0.4)].into()
    }

    #[test]
    fn alpha_one_is_identity() {
        let cfg = AlphaConfig::new(1.0, ["bus"]).unwrap();
        assert_eq!(apply_alpha(&scores(), &cfg), scores());
    }

    #[test]
    fn alpha_scales_only_unseen() {
        let cfg = AlphaConfig::new(2.0, ["bus"]).unwrap();
        let out = apply_alpha(&scores(), &cfg);
        assert_eq!(out["bus"], 0.8);
        assert_eq!(out["car"], 0.4);
        let none = AlphaConfig::new(3.7, Vec::<String>::new()).unwrap();
        assert_eq!(apply_alpha(&scores(), &none), scores());
    }

    #[test]
    fn non_positive_alpha_rejected() {
        assert!(AlphaConfig::new(0.0, ["bus"]).is_err());
        assert!(AlphaConfig::new(-1.0, ["bus"]).is_err());
        let cfg = AlphaConfig::new(1.0, ["bus"]).unwrap();
        assert!(cfg.check_disjoint(&["bus".to_string()]).is_err());
    }

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let x = golden_section_min(|a| (a - 2.0).powi(2), 0.1, 10.0, 1e-6);
        assert_relative_eq!(x, 2.0, epsilon = 1e-6);
        assert_eq!(golden_section_min(|_| 1.0, 0.5, 3.0, 1e-3), 0.5);
        assert_eq!(golden_section_min(|a| a, 1.0, 1.0, 1e-3), 1.0);
    }

    proptest! {
        #[test]
        fn alpha_preserves_order_within_groups(
            vals in prop::collection::vec(-1.0f64..1.0, 2..8),
            alpha in 0.01f64..50.0,
        ) {
            let names: Vec<String> = (0..vals.len()).map(|i| format!("c{i}")).collect();
            let unseen: BTreeSet<String> = names.iter().step_by(2).cloned().collect();
            let scores: BTreeMap<String, f64> = names.iter().cloned().zip(vals).collect();
            let cfg = AlphaConfig { alpha, unseen: unseen.clone() };
            let out = apply_alpha(&scores, &cfg);
            for a in &names {
                for b in &names {
                    if unseen.contains(a) == unseen.contains(b) && scores[a] < scores[b] {
                        prop_assert!(out[a] < out[b]);
                    }
                }
            }
        }

        #[test]
        fn cross_group_winner_switches_at_most_once(
            seen in prop::collection::vec(0.0f64..1.0, 1..5),
            unseen in prop::collection::vec(0.0f64..1.0, 1..5),
        ) {
            let mut scores = BTreeMap::new();
            for (i, v) in seen.iter().enumerate() {
                scores.insert(format!("s{i}"), *v);
            }
            let unseen_names: BTreeSet<String> = (0..unseen.len()).map(|i| format!("u{i}")).collect();
            for (name, v) in unseen_names.iter().zip(&unseen) {
                scores.insert(name.clone(), *v);
            }
            let mut switches = 0;
            let mut prev = None;
            for k in 1..400 {
                let cfg = AlphaConfig { alpha: k as f64 * 0.025, unseen: unseen_names.clone() };
                let out = apply_alpha(&scores, &cfg);
                let (winner, _) = out
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
                    .unwrap();
                let unseen_wins = unseen_names.contains(winner);
                if let Some(p) = prev {
                    if p != unseen_wins {
                        switches += 1;
                        prop_assert!(unseen_wins);
                    }
                }
                prev = Some(unseen_wins);
            }
            prop_assert!(switches <= 1);
        }
    }
}
