//! Weighted k-nearest-neighbour classification.
//!
//! Prediction weights each of the k nearest training rows and reports
//! p(class) = sum of weights of neighbours with that label / sum of all
//! weights. Inverse-distance weighting uses W = 1/d with no damping; when
//! any selected neighbour sits at distance exactly 0 the vote collapses to
//! those neighbours, shared uniformly.

use crate::error::{Error, Result};
use crate::ml::{standardize_apply, standardize_fit, LabeledMatrix, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    InverseDistance,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::InverseDistance => "inverse-distance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "inverse-distance" => Ok(Weighting::InverseDistance),
            other => Err(Error::Argument(format!(
                "unknown KNN weighting {other:?}; expected uniform or inverse-distance"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    weighting: Weighting,
    stats: Standardizer,
    d: usize,
    rows: Vec<f32>,
    labels: Vec<u8>,
}

/// Standardizes the training matrix and stores it. `k` must not exceed the
/// number of rows.
pub fn knn_fit(m: &LabeledMatrix, k: usize, weighting: Weighting) -> Result<KnnModel> {
    if k == 0 || k > m.n() {
        return Err(Error::Argument(format!(
            "k = {k} must be in 1..={} (training rows)",
            m.n()
        )));
    }
    let stats = standardize_fit(m)?;
    let mut rows = Vec::with_capacity(m.n() * m.d());
    for i in 0..m.n() {
        rows.extend_from_slice(&standardize_apply(&stats, m.row(i))?);
    }
    Ok(KnnModel {
        k,
        weighting,
        stats,
        d: m.d(),
        rows,
        labels: m.labels().to_vec(),
    })
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn stats(&self) -> &Standardizer {
        &self.stats
    }

    pub(crate) fn stored_rows(&self) -> &[f32] {
        &self.rows
    }

    pub(crate) fn stored_labels(&self) -> &[u8] {
        &self.labels
    }

    pub(crate) fn from_parts(
        k: usize,
        weighting: Weighting,
        stats: Standardizer,
        d: usize,
        rows: Vec<f32>,
        labels: Vec<u8>,
    ) -> Self {
        KnnModel {
            k,
            weighting,
            stats,
            d,
            rows,
            labels,
        }
    }

    /// Squared Euclidean distances from the standardized query to every
    /// stored row, paired with the row index, in row order.
    fn distances(&self, z: &[f32]) -> Vec<(f64, u32)> {
        self.rows
            .chunks(self.d)
            .enumerate()
            .map(|(i, row)| {
                let mut acc = 0.0f64;
                for (&a, &b) in row.iter().zip(z) {
                    let dv = a as f64 - b as f64;
                    acc += dv * dv;
                }
                (acc, i as u32)
            })
            .collect()
    }

    /// Class probabilities `[p0, p1]` for a raw (unstandardized) query.
    pub fn predict_proba(&self, x: &[f32]) -> Result<[f64; 2]> {
        let z = standardize_apply(&self.stats, x)?;
        let mut dist = self.distances(&z);
        // Full sort; ties at the k-th rank resolve by stable index order.
        dist.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
        let selected = &dist[..self.k];

        let mut vote = [0.0f64; 2];
        if self.weighting == Weighting::InverseDistance
            && selected.iter().any(|&(d2, _)| d2 == 0.0)
        {
            for &(d2, i) in selected.iter().filter(|&&(d2, _)| d2 == 0.0) {
                debug_assert_eq!(d2, 0.0);
                vote[self.labels[i as usize] as usize] += 1.0;
            }
        } else {
            for &(d2, i) in selected {
                let w = match self.weighting {
                    Weighting::Uniform => 1.0,
                    Weighting::InverseDistance => 1.0 / d2.sqrt(),
                };
                vote[self.labels[i as usize] as usize] += w;
            }
        }
        let total = vote[0] + vote[1];
        Ok([vote[0] / total, vote[1] / total])
    }

    pub fn predict(&self, x: &[f32]) -> Result<(u8, f64)> {
        let p = self.predict_proba(x)?;
        let class = u8::from(p[1] >= p[0]);
        Ok((class, p[class as usize]))
    }
}
