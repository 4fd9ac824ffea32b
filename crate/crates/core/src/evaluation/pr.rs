use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, thresholds descending, recall non-decreasing.
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        s
    }
}

/// Precision and recall when predicting positive for `score >= t`, at every
/// distinct score `t`. The area is the trapezoid rule over recall, starting
/// from recall 0 at the first point's precision.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    ensure_arg!(scores.len() == labels.len(), "{} scores but {} labels", scores.len(), labels.len());
    ensure_arg!(scores.iter().all(|s| s.is_finite()), "scores must be finite");
    let positives = labels.iter().filter(|&&l| l).count();
    ensure_arg!(positives > 0, "precision-recall needs at least one positive label");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
            threshold: t,
        });
    }
    let mut auc = 0.0;
    let (mut r0, mut p0) = (0.0, points[0].precision);
    for p in &points {
        auc += (p.recall - r0) * (p.precision + p0) / 2.0;
        r0 = p.recall;
        p0 = p.precision;
    }
    Ok(PrCurve { points, auc })
}
