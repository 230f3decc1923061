//! Evaluation metrics and report rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one evaluation run. `confusion[actual][predicted]`, class 0
/// benign, class 1 malignant. Precision/recall are `None` when their
/// denominator is empty rather than a fake zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: [[u64; 2]; 2],
    pub precision: [Option<f64>; 2],
    pub recall: [Option<f64>; 2],
    pub config_fingerprint: String,
    pub warnings: Vec<String>,
    /// Measured, not part of the serialized report: reruns of the same
    /// seeded config must produce identical files.
    #[serde(skip)]
    pub wall_time_ms: u64,
}

impl EvalReport {
    pub fn test_set_size(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let mut confusion = [[0u64; 2]; 2];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p > 1 || l > 1 {
            return Err(Error::Argument(format!(
                "labels must be 0 or 1, got prediction {p} / label {l}"
            )));
        }
        confusion[l as usize][p as usize] += 1;
    }
    let total = predictions.len() as f64;
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / total;

    let mut precision = [None; 2];
    let mut recall = [None; 2];
    for c in 0..2 {
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        if predicted > 0 {
            precision[c] = Some(confusion[c][c] as f64 / predicted as f64);
        }
        if actual > 0 {
            recall[c] = Some(confusion[c][c] as f64 / actual as f64);
        }
    }
    Ok(EvalReport {
        accuracy,
        confusion,
        precision,
        recall,
        config_fingerprint: String::new(),
        warnings: Vec::new(),
        wall_time_ms: 0,
    })
}

fn opt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "undefined".to_string(),
    }
}

/// Plain-text table for terminals and logs.
pub fn render_text(report: &EvalReport) -> String {
    let c = &report.confusion;
    let mut out = String::new();
    out.push_str(&format!("accuracy            {:.4}\n", report.accuracy));
    out.push_str("confusion              pred benign  pred malignant\n");
    out.push_str(&format!(
        "  actual benign    {:>12}  {:>14}\n",
        c[0][0], c[0][1]
    ));
    out.push_str(&format!(
        "  actual malignant {:>12}  {:>14}\n",
        c[1][0], c[1][1]
    ));
    out.push_str(&format!(
        "precision           benign {}  malignant {}\n",
        opt_metric(report.precision[0]),
        opt_metric(report.precision[1])
    ));
    out.push_str(&format!(
        "recall              benign {}  malignant {}\n",
        opt_metric(report.recall[0]),
        opt_metric(report.recall[1])
    ));
    out.push_str(&format!("config fingerprint  {}\n", report.config_fingerprint));
    out.push_str(&format!("wall time           {} ms\n", report.wall_time_ms));
    for w in &report.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// Standalone SVG rendering of the confusion matrix. Cell shading scales
/// with count.
pub fn confusion_svg(report: &EvalReport) -> String {
    let c = &report.confusion;
    let max = c.iter().flatten().copied().max().unwrap_or(0).max(1);
    let cell = 120;
    let left = 150;
    let top = 70;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         font-family=\"monospace\" font-size=\"14\">\n",
        left + 2 * cell + 20,
        top + 2 * cell + 50
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" font-size=\"16\">confusion matrix (accuracy {:.4})</text>\n",
        left,
        report.accuracy
    ));
    let col_names = ["pred benign", "pred malignant"];
    let row_names = ["actual benign", "actual malignant"];
    for (j, name) in col_names.iter().enumerate() {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\">{}</text>\n",
            left + j * cell + 10,
            top - 12,
            name
        ));
    }
    for (i, name) in row_names.iter().enumerate() {
        svg.push_str(&format!(
            "  <text x=\"10\" y=\"{}\">{}</text>\n",
            top + i * cell + cell / 2 + 5,
            name
        ));
    }
    for i in 0..2 {
        for j in 0..2 {
            let count = c[i][j];
            let shade = 255 - (count as f64 / max as f64 * 160.0).round() as u32;
            svg.push_str(&format!(
                "  <rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({shade},{shade},255)\" stroke=\"black\"/>\n",
                left + j * cell,
                top + i * cell
            ));
            svg.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" font-size=\"20\">{count}</text>\n",
                left + j * cell + cell / 2 - 10,
                top + i * cell + cell / 2 + 6
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
