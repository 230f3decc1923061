//! Gradient-boosted trees trained by exact greedy second-order splits.
//!
//! Each round fits one tree to the current first/second derivatives of the
//! loss. A split on node rows (G, H) into (GL, HL) / (GR, HR) scores
//! `gain = 1/2 * (GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l))` with `l` the L2
//! penalty, and is accepted only when gain > gamma. Leaf weights are the surrogate
//! minimizer w = -G/(H+lambda). Prediction passes the accumulated margin
//! through the objective's link.
//!
//! Determinism contract: node G/H sums accumulate over rows in ascending
//! index order in f64, so a replay that walks the fitted trees recomputes
//! every leaf weight bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::tree::{split_threshold, DecisionTree, EnsembleMode, TreeEnsemble, TreeNode};
use crate::ml::LabeledMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Binary logistic loss: g = p - y, h = p(1-p) floored at 1e-16.
    Logistic,
    /// Squared error with h = 1; exists to expose leaf weights to direct
    /// minimization checks.
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub objective: Objective,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub base_score: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct XgbConfig {
    pub rounds: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// 0 means unlimited.
    pub max_depth: u32,
    pub base_score: f64,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for XgbConfig {
    fn default() -> Self {
        XgbConfig {
            rounds: 200,
            eta: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 6,
            base_score: 0.0,
            objective: Objective::Logistic,
            seed: 0,
        }
    }
}

impl XgbConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Argument("boosting needs at least one round".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Argument(format!("eta must be positive, got {}", self.eta)));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(Error::Argument(format!(
                "lambda and gamma must be non-negative, got {} and {}",
                self.lambda, self.gamma
            )));
        }
        if !self.base_score.is_finite() {
            return Err(Error::Argument("base score must be finite".into()));
        }
        Ok(())
    }
}

/// Fit output: the model plus the training loss trace. `round_losses[0]`
/// is the loss at the base score; entry k is the loss after round k.
#[derive(Debug, Clone)]
pub struct XgbTraining {
    pub ensemble: TreeEnsemble,
    pub round_losses: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const HESSIAN_FLOOR: f64 = 1e-16;
const LOGLOSS_CLAMP: f64 = 1e-12;

fn derivatives(objective: Objective, margin: f64, target: f64) -> (f64, f64) {
    match objective {
        Objective::Logistic => {
            let p = sigmoid(margin);
            (p - target, (p * (1.0 - p)).max(HESSIAN_FLOOR))
        }
        Objective::SquaredError => (margin - target, 1.0),
    }
}

fn mean_loss(objective: Objective, margins: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(targets)
        .map(|(&m, &y)| match objective {
            Objective::Logistic => {
                let p = sigmoid(m).clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
            Objective::SquaredError => 0.5 * (m - y) * (m - y),
        })
        .sum();
    total / margins.len() as f64
}

struct Flat {
    d: usize,
    data: Vec<f32>,
}

impl Flat {
    #[inline]
    fn value(&self, row: u32, feature: usize) -> f32 {
        self.data[row as usize * self.d + feature]
    }
}

struct BoostBuilder<'a> {
    flat: &'a Flat,
    /// Per feature: all row indices sorted ascending by that feature.
    sorted: &'a [Vec<u32>],
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    gamma: f64,
    max_depth: u32,
    nodes: Vec<TreeNode>,
    mask: Vec<bool>,
}

struct SplitChoice {
    feature: usize,
    threshold: f32,
    gain: f64,
}

impl<'a> BoostBuilder<'a> {
    /// Node G/H in ascending row order; `rows` is kept ascending by
    /// construction (children partition an ascending parent).
    fn sums(&self, rows: &[u32]) -> (f64, f64) {
        let mut g = 0.0f64;
        let mut h = 0.0f64;
        for &r in rows {
            g += self.grad[r as usize];
            h += self.hess[r as usize];
        }
        (g, h)
    }

    fn best_split(&mut self, rows: &[u32], g: f64, h: f64) -> Option<SplitChoice> {
        for &r in rows {
            self.mask[r as usize] = true;
        }
        let parent_score = g * g / (h + self.lambda);
        let mut best: Option<SplitChoice> = None;
        for feature in 0..self.flat.d {
            let mut gl = 0.0f64;
            let mut hl = 0.0f64;
            let mut seen = 0usize;
            let mut prev: Option<f32> = None;
            for &r in &self.sorted[feature] {
                if !self.mask[r as usize] {
                    continue;
                }
                let v = self.flat.value(r, feature);
                if let Some(pv) = prev {
                    if v != pv {
                        let gr = g - gl;
                        let hr = h - hl;
                        let gain = 0.5
                            * (gl * gl / (hl + self.lambda) + gr * gr / (hr + self.lambda)
                                - parent_score);
                        if best.as_ref().is_none_or(|b| gain > b.gain) {
                            best = Some(SplitChoice {
                                feature,
                                threshold: split_threshold(pv, v),
                                gain,
                            });
                        }
                    }
                }
                gl += self.grad[r as usize];
                hl += self.hess[r as usize];
                seen += 1;
                prev = Some(v);
            }
            debug_assert_eq!(seen, rows.len());
        }
        for &r in rows {
            self.mask[r as usize] = false;
        }
        best
    }

    fn grow(&mut self, rows: Vec<u32>, depth: u32) -> usize {
        let (g, h) = self.sums(&rows);
        let depth_capped = self.max_depth > 0 && depth >= self.max_depth;
        let split = if rows.len() < 2 || depth_capped {
            None
        } else {
            // Strict inequality: a split must beat the per-leaf penalty.
            self.best_split(&rows, g, h).filter(|s| s.gain > self.gamma)
        };
        let split = match split {
            Some(s) => s,
            None => {
                let w = (-g / (h + self.lambda)) as f32;
                self.nodes.push(TreeNode::leaf(w));
                return self.nodes.len() - 1;
            }
        };

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| self.flat.value(r, split.feature) < split.threshold);

        let at = self.nodes.len();
        self.nodes.push(TreeNode {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: 0,
            right: 0,
            leaf: false,
            value: 0.0,
        });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[at].left = left as u32;
        self.nodes[at].right = right as u32;
        at
    }
}

fn fit_impl(flat: Flat, targets: &[f64], config: &XgbConfig) -> Result<XgbTraining> {
    config.validate()?;
    let n = targets.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "boosting needs at least 2 rows, got {n}"
        )));
    }

    // Presort every feature column once; ties keep ascending row order.
    let sorted: Vec<Vec<u32>> = (0..flat.d)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                flat.value(a, f)
                    .partial_cmp(&flat.value(b, f))
                    .expect("finite features")
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let mut margins = vec![config.base_score; n];
    let mut round_losses = Vec::with_capacity(config.rounds + 1);
    round_losses.push(mean_loss(config.objective, &margins, targets));

    let mut grad = vec![0.0f64; n];
    let mut hess = vec![0.0f64; n];
    let mut trees = Vec::with_capacity(config.rounds);

    for _ in 0..config.rounds {
        for i in 0..n {
            let (g, h) = derivatives(config.objective, margins[i], targets[i]);
            grad[i] = g;
            hess[i] = h;
        }
        let mut builder = BoostBuilder {
            flat: &flat,
            sorted: &sorted,
            grad: &grad,
            hess: &hess,
            lambda: config.lambda,
            gamma: config.gamma,
            max_depth: config.max_depth,
            nodes: Vec::new(),
            mask: vec![false; n],
        };
        builder.grow((0..n as u32).collect(), 0);
        let tree = DecisionTree::new(builder.nodes)?;

        for (i, m) in margins.iter_mut().enumerate() {
            *m += config.eta * tree.predict_value(flat.row_slice(i)) as f64;
        }
        round_losses.push(mean_loss(config.objective, &margins, targets));
        trees.push(tree);
    }

    let ensemble = TreeEnsemble::new(
        EnsembleMode::Boosted,
        trees,
        flat.d,
        config.max_depth,
        config.seed,
        Some(BoostParams {
            objective: config.objective,
            eta: config.eta,
            lambda: config.lambda,
            gamma: config.gamma,
            base_score: config.base_score,
        }),
    )?;
    Ok(XgbTraining {
        ensemble,
        round_losses,
    })
}

impl Flat {
    fn row_slice(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Binary classification fit on 0/1 labels.
pub fn xgb_fit(m: &LabeledMatrix, config: &XgbConfig) -> Result<XgbTraining> {
    if config.objective == Objective::Logistic && !m.has_both_classes() {
        return Err(Error::Argument(
            "boosting training data contains a single class".into(),
        ));
    }
    let flat = Flat {
        d: m.d(),
        data: (0..m.n()).flat_map(|i| m.row(i).to_vec()).collect(),
    };
    let targets: Vec<f64> = m.labels().iter().map(|&l| l as f64).collect();
    fit_impl(flat, &targets, config)
}

/// Regression fit on arbitrary real targets (squared-error objective).
pub fn xgb_fit_regression(
    rows: &[Vec<f32>],
    targets: &[f64],
    config: &XgbConfig,
) -> Result<XgbTraining> {
    if config.objective != Objective::SquaredError {
        return Err(Error::Argument(
            "regression fit requires the squared-error objective".into(),
        ));
    }
    if rows.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Argument("boosting needs at least 2 rows".into()));
    }
    let d = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * d);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Dimension(format!(
                "row {i} has {} columns, expected {d}",
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }
    if data.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in regression input".into()));
    }
    fit_impl(Flat { d, data }, targets, config)
}

/// Raw additive margin: base + eta * sum of tree outputs.
pub fn xgb_predict_margin(ensemble: &TreeEnsemble, x: &[f32]) -> Result<f64> {
    let params = ensemble.boost_params().ok_or_else(|| {
        Error::Argument("xgb_predict needs a boosted-mode ensemble".into())
    })?;
    ensemble.check_input(x)?;
    let sum: f64 = ensemble
        .trees()
        .iter()
        .map(|t| t.predict_value(x) as f64)
        .sum();
    Ok(params.base_score + params.eta * sum)
}

/// Class and probability. Logistic ensembles map the margin through a
/// sigmoid; squared-error ensembles report the clamped margin.
pub fn xgb_predict(ensemble: &TreeEnsemble, x: &[f32]) -> Result<(u8, f64)> {
    let params = ensemble.boost_params().ok_or_else(|| {
        Error::Argument("xgb_predict needs a boosted-mode ensemble".into())
    })?;
    let margin = xgb_predict_margin(ensemble, x)?;
    let p1 = match params.objective {
        Objective::Logistic => sigmoid(margin),
        Objective::SquaredError => margin.clamp(0.0, 1.0),
    };
    let class = u8::from(p1 >= 0.5);
    Ok((class, p1))
}
