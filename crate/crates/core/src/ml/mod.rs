//! Classifiers consuming fused feature vectors: weighted k-nearest
//! neighbours, a bagged random forest, and gradient-boosted trees.

mod forest;
mod knn;
pub mod io;
mod tree;
mod xgb;

pub use forest::{forest_fit, forest_predict, ForestConfig};
pub use io::{load_ensemble, load_knn, save_ensemble, save_knn};
pub use knn::{knn_fit, KnnModel, Weighting};
pub use tree::{
    best_gini_split, split_threshold, DecisionTree, EnsembleMode, GiniSplit, TreeEnsemble,
    TreeNode,
};
pub use xgb::{
    xgb_fit, xgb_fit_regression, xgb_predict, xgb_predict_margin, BoostParams, Objective,
    XgbConfig, XgbTraining,
};

use crate::error::{Error, Result};

/// Row-major design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    d: usize,
    data: Vec<f32>,
    labels: Vec<u8>,
}

impl LabeledMatrix {
    pub fn new(rows: Vec<Vec<f32>>, labels: Vec<u8>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Argument("matrix needs at least one row".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::Dimension("rows must have at least one column".into()));
        }
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
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value at row {}, column {}",
                bad / d,
                bad % d
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        Ok(LabeledMatrix { d, data, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.iter().any(|&l| l == 0) && self.labels.iter().any(|&l| l == 1)
    }
}

/// Per-dimension z-score statistics. Zero-variance dimensions are marked
/// and passed through untouched by both `apply` and `invert`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub(crate) fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Self {
        Standardizer { mean, std }
    }
}

/// Population mean/stddev per dimension, over at least two rows.
pub fn standardize_fit(m: &LabeledMatrix) -> Result<Standardizer> {
    if m.n() < 2 {
        return Err(Error::Argument(format!(
            "standardization needs at least 2 rows, got {}",
            m.n()
        )));
    }
    let n = m.n() as f64;
    let mut mean = vec![0.0f64; m.d()];
    for i in 0..m.n() {
        for (a, &v) in mean.iter_mut().zip(m.row(i)) {
            *a += v as f64;
        }
    }
    for a in mean.iter_mut() {
        *a /= n;
    }
    let mut var = vec![0.0f64; m.d()];
    for i in 0..m.n() {
        for ((a, &mu), &v) in var.iter_mut().zip(&mean).zip(m.row(i)) {
            let dv = v as f64 - mu;
            *a += dv * dv;
        }
    }
    let std = var.iter().map(|&v| (v / n).sqrt()).collect();
    Ok(Standardizer { mean, std })
}

pub fn standardize_apply(stats: &Standardizer, row: &[f32]) -> Result<Vec<f32>> {
    if row.len() != stats.mean.len() {
        return Err(Error::Dimension(format!(
            "vector of {} values against statistics for {} dimensions",
            row.len(),
            stats.mean.len()
        )));
    }
    Ok(row
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(&v, (&mu, &sd))| {
            if sd == 0.0 {
                v
            } else {
                ((v as f64 - mu) / sd) as f32
            }
        })
        .collect())
}

pub fn standardize_invert(stats: &Standardizer, row: &[f32]) -> Result<Vec<f32>> {
    if row.len() != stats.mean.len() {
        return Err(Error::Dimension(format!(
            "vector of {} values against statistics for {} dimensions",
            row.len(),
            stats.mean.len()
        )));
    }
    Ok(row
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(&v, (&mu, &sd))| {
            if sd == 0.0 {
                v
            } else {
                (v as f64 * sd + mu) as f32
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_col_matrix() -> LabeledMatrix {
        LabeledMatrix::new(
            vec![vec![1.0, 7.5], vec![3.0, 7.5]],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn matrix_invariants() {
        assert!(LabeledMatrix::new(vec![], vec![]).is_err());
        assert!(LabeledMatrix::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        assert!(LabeledMatrix::new(vec![vec![1.0]], vec![2]).is_err());
        assert!(LabeledMatrix::new(vec![vec![f32::INFINITY]], vec![0]).is_err());
    }

    #[test]
    fn two_point_column_standardizes_to_unit() {
        // Column [1, 3]: mean 2, population std 1, transformed [-1, 1].
        let stats = standardize_fit(&two_col_matrix()).unwrap();
        assert_eq!(stats.mean()[0], 2.0);
        assert_eq!(stats.std()[0], 1.0);
        let a = standardize_apply(&stats, &[1.0, 7.5]).unwrap();
        let b = standardize_apply(&stats, &[3.0, 7.5]).unwrap();
        assert_eq!(a[0], -1.0);
        assert_eq!(b[0], 1.0);
    }

    #[test]
    fn constant_column_passes_through() {
        let stats = standardize_fit(&two_col_matrix()).unwrap();
        let out = standardize_apply(&stats, &[2.0, 7.5]).unwrap();
        assert_eq!(out[1], 7.5);
    }

    #[test]
    fn apply_then_invert_round_trips() {
        let m = LabeledMatrix::new(
            vec![
                vec![0.25, -3.0, 10.0],
                vec![1.5, 4.0, 10.0],
                vec![-2.0, 0.5, 10.0],
            ],
            vec![0, 1, 0],
        )
        .unwrap();
        let stats = standardize_fit(&m).unwrap();
        for i in 0..m.n() {
            let z = standardize_apply(&stats, m.row(i)).unwrap();
            let back = standardize_invert(&stats, &z).unwrap();
            for (o, r) in back.iter().zip(m.row(i)) {
                assert!((o - r).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fit_needs_two_rows() {
        let m = LabeledMatrix::new(vec![vec![1.0]], vec![0]).unwrap();
        assert!(matches!(standardize_fit(&m), Err(Error::Argument(_))));
    }

    #[test]
    fn apply_rejects_wrong_width() {
        let stats = standardize_fit(&two_col_matrix()).unwrap();
        assert!(matches!(
            standardize_apply(&stats, &[1.0]),
            Err(Error::Dimension(_))
        ));
    }
}
