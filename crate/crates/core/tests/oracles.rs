mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsc_core::calibration::{learn_alpha, AlphaSearch};
use zsc_core::detection::{
    recognition_loss, targets_for, train, Cell, CellGrid, GroundTruthBox, ProjectionModel, TrainConfig,
};
use zsc_core::embedding::{ClassEmbedding, EmbeddingSet};
use zsc_core::BBox;

use common::*;

#[test]
fn average_precision_matches_threshold_enumeration() {
    for (ap, oracle) in ap_pairs(11, 50) {
        assert_eq!(ap, oracle);
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for (trial, err) in gradient_errors(5, 20).into_iter().enumerate() {
        assert!(err < 1e-4, "trial {trial}: relative error {err}");
    }
}

#[test]
fn learned_alpha_matches_grid_oracle_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let classes = names(&["horse", "dog", "cat", "train"]);
    let simulated = set(&["dog", "train"]);
    let search = AlphaSearch::default();
    for trial in 0..10 {
        let seen = random_seen_set(&mut rng, &classes);
        let mut grids = Vec::new();
        let mut gts = Vec::new();
        for i in 0..4 {
            let objects = [
                (classes[i].as_str(), 0),
                (classes[rng.random_range(0..4)].as_str(), 3),
            ];
            let (g, b) = random_grid(&mut rng, &format!("img{i}"), 2, 4, &objects);
            grids.push(g);
            gts.extend(b);
        }
        let targets = targets_for(&grids, &gts).unwrap();
        let model = random_model(&mut rng, 4, classes.len());
        let learned = learn_alpha(&model, &grids, &targets, &seen, &simulated, &search).unwrap();
        let objective = |a: f64| calibration_objective(&model, &grids, &targets, &seen, &simulated, a);
        let oracle = alpha_grid_oracle(objective, search.lo, search.hi, 1e-3);
        assert!(
            (learned - oracle).abs() <= search.tol + 1e-3,
            "trial {trial}: learned {learned}, oracle {oracle}"
        );
    }
}

/// Three seen classes; the first is simulated-unseen. After masking its own
/// reference entry, a cell of that class scores exactly 0.5 against it and
/// cells of other classes score 0, so the objective is minimized at 2.
#[test]
fn alpha_doubles_half_scale_scores() {
    let seen = EmbeddingSet::new(vec![
        ClassEmbedding::new("a", vec![2.0, 1.0, 0.0]),
        ClassEmbedding::new("b", vec![1.0, 2.0, 1.0]),
        ClassEmbedding::new("c", vec![1.0, 1.0, 2.0]),
    ])
    .unwrap();
    let identity = ProjectionModel::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let cell = |feature: Vec<f64>| Cell {
        feature,
        box_pred: [0.25, 0.25, 0.2, 0.2],
        objectness: 1.0,
    };
    let grid = |id: &str, f: Vec<f64>| {
        let bg = cell(vec![0.0, 0.0, 1.0]);
        CellGrid::new(id, 2, vec![cell(f), bg.clone(), bg.clone(), bg]).unwrap()
    };
    let grids = vec![grid("x", vec![3f64.sqrt(), 1.0, 0.0]), grid("y", vec![0.0, 0.0, 1.0])];
    let gt = |id: &str, class: &str| GroundTruthBox {
        image_id: id.into(),
        bbox: BBox::new(0.1, 0.1, 0.4, 0.4),
        class_name: class.into(),
    };
    let targets = targets_for(&grids, &[gt("x", "a"), gt("y", "c")]).unwrap();
    let sim = set(&["a"]);
    let search = AlphaSearch::default();
    let learned = learn_alpha(&identity, &grids, &targets, &seen, &sim, &search).unwrap();
    let oracle = alpha_grid_oracle(
        |a| calibration_objective(&identity, &grids, &targets, &seen, &sim, a),
        search.lo,
        search.hi,
        1e-3,
    );
    assert!((oracle - 2.0).abs() < 1e-9, "oracle {oracle}");
    assert!((learned - 2.0).abs() <= search.tol, "learned {learned}");
}

/// Solves `(A + mu I) u = b` by Gaussian elimination; `None` if singular.
fn solve_shifted(a: &[Vec<f64>], b: &[f64], mu: f64) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i].clone();
            row[i] += mu;
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let k = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= k * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

fn is_positive_definite(a: &[Vec<f64>], mu: f64) -> bool {
    // Cholesky succeeds iff the shifted matrix is positive definite.
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j] + if i == j { mu } else { 0.0 };
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    true
}

/// `min ||t - P u||^2` over unit `u`, where the rows of `P` are the unit
/// class embeddings. Stationary points satisfy `(P'P + mu I) u = P't`; the
/// global minimum has `P'P + mu I` positive semidefinite, and on that range
/// `|u(mu)|` decreases, so bisection on `mu` finds `|u| = 1`.
fn sphere_least_squares(p: &[Vec<f64>], t: &[f64]) -> f64 {
    let e = p[0].len();
    let a: Vec<Vec<f64>> = (0..e)
        .map(|i| (0..e).map(|j| p.iter().map(|r| r[i] * r[j]).sum()).collect())
        .collect();
    let b: Vec<f64> = (0..e).map(|i| p.iter().zip(t).map(|(r, tk)| r[i] * tk).sum()).collect();
    let (mut lo, mut hi) = (-1e3, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if is_positive_definite(&a, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let norm_at = |mu: f64| {
        let u = solve_shifted(&a, &b, mu).unwrap();
        u.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    let mut lo = hi + 1e-12;
    let mut hi = lo + 1.0;
    while norm_at(hi) > 1.0 {
        hi = lo + 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = solve_shifted(&a, &b, hi).unwrap();
    p.iter()
        .zip(t)
        .map(|(r, tk)| (tk - r.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>()).powi(2))
        .sum()
}

/// Four classes, 200 object cells with one-hot features plus small noise.
/// A linear map can send each class to any direction, so the best reachable
/// recognition loss is the per-class sphere-constrained least squares
/// optimum; training should land close to it.
#[test]
fn training_approaches_the_least_squares_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes = names(&["horse", "dog", "cat", "train"]);
    let seen = random_seen_set(&mut rng, &classes);
    let mut grids = Vec::new();
    let mut gts = Vec::new();
    for i in 0..50 {
        let cells = (0..4)
            .map(|k| {
                let mut f: Vec<f64> = (0..4).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
                f.iter_mut().for_each(|x| *x += rng.random_range(-0.01..0.01));
                Cell {
                    feature: f,
                    box_pred: [0.25, 0.25, 0.2, 0.2],
                    objectness: 1.0,
                }
            })
            .collect();
        let id = format!("img{i}");
        grids.push(CellGrid::new(&id, 2, cells).unwrap());
        for k in 0..4 {
            let (cx, cy) = (0.25 + 0.5 * (k % 2) as f64, 0.25 + 0.5 * (k / 2) as f64);
            gts.push(GroundTruthBox {
                image_id: id.clone(),
                bbox: BBox::from_center(cx, cy, 0.2, 0.2),
                class_name: classes[k].clone(),
            });
        }
    }
    let targets = targets_for(&grids, &gts).unwrap();

    let unit: Vec<Vec<f64>> = seen
        .iter()
        .map(|e| {
            let n = e.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            e.values.iter().map(|x| x / n).collect()
        })
        .collect();
    let optimum: f64 = (0..4)
        .map(|k| {
            let t: Vec<f64> = (0..4).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
            50.0 * sphere_least_squares(&unit, &t)
        })
        .sum();

    let cfg = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    let first = recognition_loss(&grids, &targets, &ProjectionModel::random(4, 4, 1), &seen).unwrap();
    let out = train(&grids, &targets, &seen, &cfg).unwrap();
    let last = recognition_loss(&grids, &targets, &out.model, &seen).unwrap();
    let per_cell_excess = (last - optimum) / 200.0;
    println!("initial {first:.4}  trained {last:.4}  optimum {optimum:.4}  excess/cell {per_cell_excess:.5}");
    assert!(last >= optimum - 1e-6 * 200.0);
    assert!(per_cell_excess < 0.05, "excess per cell {per_cell_excess}");
    assert!(last < first);
}

#[test]
fn training_is_bit_identical_under_a_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let classes = names(&["horse", "dog"]);
    let seen = random_seen_set(&mut rng, &classes);
    let (g, b) = random_grid(&mut rng, "x", 2, 3, &[("horse", 0), ("dog", 3)]);
    let grids = vec![g];
    let targets = targets_for(&grids, &b).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch: 1,
        seed: 42,
        ..TrainConfig::default()
    };
    let a = train(&grids, &targets, &seen, &cfg).unwrap();
    let b = train(&grids, &targets, &seen, &cfg).unwrap();
    let bits = |m: &ProjectionModel| m.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
}
