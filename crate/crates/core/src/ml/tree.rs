//! Binary decision trees shared by the forest and the boosted ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::xgb::BoostParams;

/// Flat tree node. Internal nodes route `x[feature] < threshold` to
/// `left`, otherwise to `right`; leaves carry `value` (class-1 fraction in
/// a forest, weight in a boosted ensemble).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub feature: u32,
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
    pub leaf: bool,
    pub value: f32,
}

impl TreeNode {
    pub(crate) fn leaf(value: f32) -> Self {
        TreeNode {
            feature: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            leaf: true,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub(crate) fn new(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Construction("tree must have at least one node".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if !n.leaf {
                let (l, r) = (n.left as usize, n.right as usize);
                if l <= i || r <= i || l >= nodes.len() || r >= nodes.len() {
                    return Err(Error::Construction(format!(
                        "node {i} has invalid children {l}/{r}"
                    )));
                }
            }
        }
        Ok(DecisionTree { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf).count()
    }

    /// Value of the leaf the sample falls into.
    pub fn predict_value(&self, x: &[f32]) -> f32 {
        let mut at = 0usize;
        loop {
            let n = &self.nodes[at];
            if n.leaf {
                return n.value;
            }
            at = if x[n.feature as usize] < n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Forest,
    Boosted,
}

/// A trained forest or boosted-tree model.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub(crate) mode: EnsembleMode,
    pub(crate) trees: Vec<DecisionTree>,
    pub(crate) d: usize,
    /// 0 means unlimited.
    pub(crate) max_depth: u32,
    pub(crate) seed: u64,
    pub(crate) boost: Option<BoostParams>,
}

impl TreeEnsemble {
    pub(crate) fn new(
        mode: EnsembleMode,
        trees: Vec<DecisionTree>,
        d: usize,
        max_depth: u32,
        seed: u64,
        boost: Option<BoostParams>,
    ) -> Result<Self> {
        match (mode, &boost) {
            (EnsembleMode::Boosted, Some(p)) => {
                if p.eta <= 0.0 || p.lambda < 0.0 || p.gamma < 0.0 {
                    return Err(Error::Construction(format!(
                        "boosted ensemble needs eta > 0, lambda >= 0, gamma >= 0; \
                         got eta={}, lambda={}, gamma={}",
                        p.eta, p.lambda, p.gamma
                    )));
                }
            }
            (EnsembleMode::Boosted, None) => {
                return Err(Error::Construction(
                    "boosted ensemble is missing its parameters".into(),
                ))
            }
            (EnsembleMode::Forest, Some(_)) => {
                return Err(Error::Construction(
                    "forest ensemble does not take boosting parameters".into(),
                ))
            }
            (EnsembleMode::Forest, None) => {}
        }
        Ok(TreeEnsemble {
            mode,
            trees,
            d,
            max_depth,
            seed,
            boost,
        })
    }

    pub fn mode(&self) -> EnsembleMode {
        self.mode
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn boost_params(&self) -> Option<&BoostParams> {
        self.boost.as_ref()
    }

    pub(crate) fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }
}

/// Gini impurity of a label multiset given counts per class.
fn gini(c0: f64, c1: f64) -> f64 {
    let n = c0 + c1;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = c0 / n;
    let p1 = c1 / n;
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GiniSplit {
    pub feature: usize,
    pub threshold: f32,
    /// Size-weighted child impurity (lower is better).
    pub weighted_impurity: f64,
}

/// Midpoint of two adjacent sorted values, nudged so the predicate
/// `x < threshold` puts `a` on the left even after f32 rounding.
pub fn split_threshold(a: f32, b: f32) -> f32 {
    let thr = 0.5 * (a + b);
    if thr <= a {
        b
    } else {
        thr
    }
}

/// Exhaustive best Gini split over the given candidate features,
/// considering every threshold between adjacent distinct values. Ties
/// break toward the lower feature index, then the lower threshold.
/// `scratch` avoids reallocating the (value, label) buffer per call.
pub fn best_gini_split(
    rows: &[u32],
    candidates: &[usize],
    value_of: impl Fn(u32, usize) -> f32,
    label_of: impl Fn(u32) -> u8,
    scratch: &mut Vec<(f32, u8)>,
) -> Option<GiniSplit> {
    let n = rows.len() as f64;
    let mut best: Option<GiniSplit> = None;
    for &feature in candidates {
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (value_of(r, feature), label_of(r))));
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

        let total1: f64 = scratch.iter().map(|&(_, l)| l as f64).sum();
        let total0 = n - total1;
        let mut left0 = 0.0f64;
        let mut left1 = 0.0f64;
        for i in 0..scratch.len() - 1 {
            let (v, l) = scratch[i];
            if l == 0 {
                left0 += 1.0;
            } else {
                left1 += 1.0;
            }
            let next = scratch[i + 1].0;
            if next == v {
                continue;
            }
            let nl = left0 + left1;
            let nr = n - nl;
            let weighted = (nl * gini(left0, left1) + nr * gini(total0 - left0, total1 - left1)) / n;
            let candidate = GiniSplit {
                feature,
                threshold: split_threshold(v, next),
                weighted_impurity: weighted,
            };
            let better = match &best {
                None => true,
                Some(b) => weighted < b.weighted_impurity,
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    best
}
