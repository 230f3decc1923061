//! Bagged random forest with Gini splits.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ml::tree::{best_gini_split, DecisionTree, EnsembleMode, TreeEnsemble, TreeNode};
use crate::ml::LabeledMatrix;

#[derive(Debug, Clone, Copy)]
pub struct ForestConfig {
    pub trees: usize,
    /// None grows until purity.
    pub max_depth: Option<u32>,
    pub seed: u64,
    /// Identity sampling instead of bootstrap; used to make single trees
    /// reproduce their training data exactly.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 100,
            max_depth: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

struct TreeBuilder<'a> {
    m: &'a LabeledMatrix,
    candidates_per_split: usize,
    max_depth: Option<u32>,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf_value(&self, rows: &[u32]) -> f32 {
        let ones: u32 = rows.iter().map(|&r| self.m.label(r as usize) as u32).sum();
        ones as f32 / rows.len() as f32
    }

    /// Grow a subtree over `rows`, returning its node index.
    fn grow(&mut self, rows: Vec<u32>, depth: u32, rng: &mut ChaCha8Rng) -> usize {
        let first = self.m.label(rows[0] as usize);
        let pure = rows.iter().all(|&r| self.m.label(r as usize) == first);
        let depth_capped = self.max_depth.is_some_and(|lim| depth >= lim);
        if pure || rows.len() < 2 || depth_capped {
            self.nodes.push(TreeNode::leaf(self.leaf_value(&rows)));
            return self.nodes.len() - 1;
        }

        let candidates = sample_features(self.m.d(), self.candidates_per_split, rng);
        let mut scratch = Vec::with_capacity(rows.len());
        let split = best_gini_split(
            &rows,
            &candidates,
            |r, f| self.m.row(r as usize)[f],
            |r| self.m.label(r as usize),
            &mut scratch,
        );
        let split = match split {
            Some(s) => s,
            None => {
                // All candidate features constant on these rows.
                self.nodes.push(TreeNode::leaf(self.leaf_value(&rows)));
                return self.nodes.len() - 1;
            }
        };

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| self.m.row(r as usize)[split.feature] < split.threshold);

        let at = self.nodes.len();
        self.nodes.push(TreeNode {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: 0,
            right: 0,
            leaf: false,
            value: 0.0,
        });
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[at].left = left as u32;
        self.nodes[at].right = right as u32;
        at
    }
}

/// `count` distinct feature indices in ascending order.
fn sample_features(d: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if count >= d {
        return (0..d).collect();
    }
    let mut picked = rand::seq::index::sample(rng, d, count).into_vec();
    picked.sort_unstable();
    picked
}

fn build_tree(m: &LabeledMatrix, config: &ForestConfig, tree_idx: u64) -> Result<DecisionTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(tree_idx);

    let rows: Vec<u32> = if config.bootstrap {
        (0..m.n()).map(|_| rng.gen_range(0..m.n()) as u32).collect()
    } else {
        (0..m.n() as u32).collect()
    };

    let mut builder = TreeBuilder {
        m,
        candidates_per_split: ((m.d() as f64).sqrt().floor() as usize).max(1),
        max_depth: config.max_depth,
        nodes: Vec::new(),
    };
    builder.grow(rows, 0, &mut rng);
    DecisionTree::new(builder.nodes)
}

/// Train `config.trees` trees, each on its own bootstrap sample with its
/// own RNG stream, so the ensemble is reproducible regardless of how the
/// per-tree work is scheduled.
pub fn forest_fit(m: &LabeledMatrix, config: &ForestConfig) -> Result<TreeEnsemble> {
    if m.n() < 2 {
        return Err(Error::Argument(format!(
            "forest needs at least 2 rows, got {}",
            m.n()
        )));
    }
    if !m.has_both_classes() {
        return Err(Error::Argument(
            "forest training data contains a single class".into(),
        ));
    }
    if config.trees == 0 {
        return Err(Error::Argument("forest needs at least one tree".into()));
    }
    let trees: Vec<DecisionTree> = (0..config.trees as u64)
        .into_par_iter()
        .map(|i| build_tree(m, config, i))
        .collect::<Result<_>>()?;
    TreeEnsemble::new(
        EnsembleMode::Forest,
        trees,
        m.d(),
        config.max_depth.unwrap_or(0),
        config.seed,
        None,
    )
}

/// Majority vote; the returned probability is the winning class's vote
/// fraction. Ties go to class 1.
pub fn forest_predict(ensemble: &TreeEnsemble, x: &[f32]) -> Result<(u8, f64)> {
    if ensemble.mode() != EnsembleMode::Forest {
        return Err(Error::Argument(
            "forest_predict needs a forest-mode ensemble".into(),
        ));
    }
    ensemble.check_input(x)?;
    let votes1 = ensemble
        .trees()
        .iter()
        .filter(|t| t.predict_value(x) >= 0.5)
        .count();
    let frac1 = votes1 as f64 / ensemble.trees().len() as f64;
    if frac1 >= 0.5 {
        Ok((1, frac1))
    } else {
        Ok((0, 1.0 - frac1))
    }
}
