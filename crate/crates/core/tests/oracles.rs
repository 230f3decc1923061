//! Classifier implementations checked against independent brute-force
//! re-implementations written in this file.

use fusion_mammo::ml::{
    best_gini_split, knn_fit, standardize_apply, standardize_fit, xgb_fit, GiniSplit,
    LabeledMatrix, Objective, Weighting, XgbConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, dup_chance: f64) -> LabeledMatrix {
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // Occasionally copy an earlier value to exercise tie handling.
        if i > 0 && rng.gen_bool(dup_chance) {
            let src = rng.gen_range(0..i);
            let col = rng.gen_range(0..d);
            row[col] = rows[src][col];
        }
        rows.push(row);
    }
    let labels = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
    LabeledMatrix::new(rows, labels).unwrap()
}

// ------------------------------------------------------------------- knn

/// Naive reference: standardize, measure every distance, full sort,
/// take k, vote. Shares only the standardizer with the library; the
/// distance, selection, and voting math is re-derived here.
fn knn_reference(
    train: &LabeledMatrix,
    k: usize,
    query: &[f32],
) -> (u8, [f64; 2]) {
    let stats = standardize_fit(train).unwrap();
    let z = standardize_apply(&stats, query).unwrap();
    let mut scored: Vec<(f64, usize)> = (0..train.n())
        .map(|i| {
            let row = standardize_apply(&stats, train.row(i)).unwrap();
            let d2: f64 = row
                .iter()
                .zip(&z)
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum();
            (d2, i)
        })
        .collect();
    scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let selected = &scored[..k];

    let mut vote = [0.0f64; 2];
    let zero_hits: Vec<&(f64, usize)> = selected.iter().filter(|(d2, _)| *d2 == 0.0).collect();
    if zero_hits.is_empty() {
        for &(d2, i) in selected {
            vote[train.label(i) as usize] += 1.0 / d2.sqrt();
        }
    } else {
        for &(_, i) in &zero_hits {
            vote[train.label(*i) as usize] += 1.0;
        }
    }
    let total = vote[0] + vote[1];
    let proba = [vote[0] / total, vote[1] / total];
    (u8::from(proba[1] >= proba[0]), proba)
}

#[test]
fn knn_matches_brute_force_on_100_random_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let train = random_matrix(&mut rng, 60, 8, 0.0);
    let k = 5;
    let model = knn_fit(&train, k, Weighting::InverseDistance).unwrap();

    for q in 0..100 {
        let query: Vec<f32> = if q % 10 == 0 {
            // Every tenth query replays a training row, forcing the
            // zero-distance branch.
            train.row(q % train.n()).to_vec()
        } else {
            (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let (label, proba) = model.predict(&query).map(|(l, p)| (l, p)).unwrap();
        let got = model.predict_proba(&query).unwrap();
        let (ref_label, ref_proba) = knn_reference(&train, k, &query);
        assert_eq!(label, ref_label, "query {q} predicted label");
        for c in 0..2 {
            assert!(
                (got[c] - ref_proba[c]).abs() < 1e-12,
                "query {q} class {c}: {} vs reference {}",
                got[c],
                ref_proba[c]
            );
        }
        assert!((proba - ref_proba[ref_label as usize]).abs() < 1e-12);
    }
}

// ------------------------------------------------------------------ gini

fn gini_impurity(c0: usize, c1: usize) -> f64 {
    let n = (c0 + c1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = c0 as f64 / n;
    let p1 = c1 as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Exhaustive reference: for every feature and every threshold between
/// adjacent distinct values, partition from scratch and recount labels.
fn gini_reference(m: &LabeledMatrix) -> Option<GiniSplit> {
    let n = m.n() as f64;
    let mut best: Option<GiniSplit> = None;
    for feature in 0..m.d() {
        let mut values: Vec<f32> = (0..m.n()).map(|i| m.row(i)[feature]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let threshold = {
                let mid = 0.5 * (pair[0] + pair[1]);
                if mid <= pair[0] { pair[1] } else { mid }
            };
            let mut counts = [[0usize; 2]; 2]; // [side][label]
            for i in 0..m.n() {
                let side = usize::from(m.row(i)[feature] >= threshold);
                counts[side][m.label(i) as usize] += 1;
            }
            let nl = (counts[0][0] + counts[0][1]) as f64;
            let nr = (counts[1][0] + counts[1][1]) as f64;
            let weighted = (nl * gini_impurity(counts[0][0], counts[0][1])
                + nr * gini_impurity(counts[1][0], counts[1][1]))
                / n;
            let better = match &best {
                None => true,
                Some(b) => weighted < b.weighted_impurity,
            };
            if better {
                best = Some(GiniSplit {
                    feature,
                    threshold,
                    weighted_impurity: weighted,
                });
            }
        }
    }
    best
}

#[test]
fn gini_split_matches_exhaustive_oracle_up_to_50_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut scratch = Vec::new();
    for trial in 0..200 {
        let n = rng.gen_range(2..=50);
        let d = rng.gen_range(1..=4);
        let m = random_matrix(&mut rng, n, d, 0.4);
        let rows: Vec<u32> = (0..n as u32).collect();
        let candidates: Vec<usize> = (0..d).collect();
        let got = best_gini_split(
            &rows,
            &candidates,
            |r, f| m.row(r as usize)[f],
            |r| m.label(r as usize),
            &mut scratch,
        );
        let expected = gini_reference(&m);
        match (got, expected) {
            (None, None) => {}
            (Some(g), Some(e)) => {
                assert_eq!(g.feature, e.feature, "trial {trial} feature");
                assert_eq!(
                    g.threshold.to_bits(),
                    e.threshold.to_bits(),
                    "trial {trial} threshold: {} vs {}",
                    g.threshold,
                    e.threshold
                );
                assert!(
                    (g.weighted_impurity - e.weighted_impurity).abs() < 1e-12,
                    "trial {trial} impurity: {} vs {}",
                    g.weighted_impurity,
                    e.weighted_impurity
                );
            }
            (g, e) => panic!("trial {trial}: library {g:?} vs oracle {e:?}"),
        }
    }
}

#[test]
fn gini_split_none_only_when_all_features_constant() {
    let m = LabeledMatrix::new(
        vec![vec![3.0, 1.0], vec![3.0, 1.0], vec![3.0, 1.0]],
        vec![0, 1, 0],
    )
    .unwrap();
    let rows: Vec<u32> = vec![0, 1, 2];
    let mut scratch = Vec::new();
    let got = best_gini_split(&rows, &[0, 1], |r, f| m.row(r as usize)[f], |r| m.label(r as usize), &mut scratch);
    assert!(got.is_none());
    assert!(gini_reference(&m).is_none());
}

// ------------------------------------------------------------------- xgb

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Replay training: walk every training row through each boosting round,
/// recompute per-leaf G and H from scratch, and verify each stored leaf
/// is exactly the f32 rounding of -G/(H+lambda).
#[test]
fn xgb_leaf_weights_satisfy_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let m = random_matrix(&mut rng, 80, 6, 0.2);
    let config = XgbConfig {
        rounds: 12,
        eta: 0.3,
        lambda: 1.5,
        gamma: 0.0,
        max_depth: 3,
        base_score: 0.5,
        objective: Objective::Logistic,
        seed: 0,
    };
    let training = xgb_fit(&m, &config).unwrap();
    let ensemble = &training.ensemble;
    assert_eq!(ensemble.trees().len(), config.rounds);

    let mut margins = vec![config.base_score; m.n()];
    let mut checked_leaves = 0usize;
    for tree in ensemble.trees() {
        // Route every row to its leaf, accumulating G/H in ascending row
        // order, exactly the order the trainer commits to.
        let nodes = tree.nodes();
        let mut sums = vec![(0.0f64, 0.0f64); nodes.len()];
        for i in 0..m.n() {
            let p = sigmoid(margins[i]);
            let y = m.label(i) as f64;
            let g = p - y;
            let h = (p * (1.0 - p)).max(1e-16);
            let mut at = 0usize;
            loop {
                let node = &nodes[at];
                if node.leaf {
                    sums[at].0 += g;
                    sums[at].1 += h;
                    break;
                }
                at = if m.row(i)[node.feature as usize] < node.threshold {
                    node.left as usize
                } else {
                    node.right as usize
                };
            }
        }
        for (at, node) in nodes.iter().enumerate() {
            if !node.leaf {
                continue;
            }
            let (g, h) = sums[at];
            let expected = (-g / (h + config.lambda)) as f32;
            // Stored weights are f32; after identical rounding the match
            // must be exact, which is far inside the 1e-9 budget.
            assert_eq!(
                node.value.to_bits(),
                expected.to_bits(),
                "leaf {at}: stored {} vs closed form {expected}",
                node.value
            );
            assert!(((node.value as f64) - (-g / (h + config.lambda))).abs() < 1e-6);
            checked_leaves += 1;
        }
        for i in 0..m.n() {
            margins[i] += config.eta * tree.predict_value(m.row(i)) as f64;
        }
    }
    assert!(checked_leaves >= config.rounds, "no leaves checked");
}

#[test]
fn xgb_logloss_is_non_increasing_over_50_rounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let m = random_matrix(&mut rng, 60, 5, 0.0);
    let config = XgbConfig {
        rounds: 50,
        eta: 0.1,
        lambda: 1.0,
        gamma: 0.0,
        max_depth: 3,
        base_score: 0.5,
        objective: Objective::Logistic,
        seed: 0,
    };
    let training = xgb_fit(&m, &config).unwrap();
    assert_eq!(training.round_losses.len(), 51);
    for w in training.round_losses.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-12,
            "loss increased: {} -> {}",
            w[0],
            w[1]
        );
    }
}
