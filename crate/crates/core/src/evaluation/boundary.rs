//! Linear attribute boundaries in latent space.
//!
//! A soft-margin linear SVM (hinge loss, `C = 1`) is solved by dual
//! coordinate descent on mean-centred vectors; the bias is carried by an
//! augmented constant feature and mapped back to the original coordinates
//! afterwards, so a global translation of the data only moves the bias.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};
use crate::latent::LatentCode;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticBoundary {
    pub attribute: String,
    /// Unit normal.
    pub normal: Vec<f64>,
    pub bias: f64,
}

impl SemanticBoundary {
    /// Signed distance of a vector to the hyperplane.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        ensure_arg!(v.len() == self.normal.len(), "vector width {} != boundary width {}", v.len(), self.normal.len());
        Ok(self.normal.iter().zip(v).map(|(n, x)| n * x).sum::<f64>() + self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, max_epochs: 2000, tolerance: 1e-6, seed: 0 }
    }
}

/// Fits a boundary on row-mean reduced codes.
pub fn fit_boundary(codes: &[&LatentCode], labels: &[bool], attribute: &str) -> Result<SemanticBoundary> {
    let vectors: Vec<Vec<f64>> = codes.iter().map(|c| c.row_mean()).collect();
    fit_boundary_vectors(&vectors, labels, attribute, &SvmConfig::default())
}

pub fn fit_boundary_vectors(
    vectors: &[Vec<f64>],
    labels: &[bool],
    attribute: &str,
    cfg: &SvmConfig,
) -> Result<SemanticBoundary> {
    ensure_arg!(vectors.len() == labels.len(), "{} vectors but {} labels", vectors.len(), labels.len());
    ensure_arg!(
        labels.iter().any(|&l| l) && labels.iter().any(|&l| !l),
        "boundary fitting needs both classes"
    );
    let d = vectors[0].len();
    ensure_arg!(d >= 1 && vectors.iter().all(|v| v.len() == d), "vectors must share one width");
    ensure_arg!(cfg.c > 0.0, "regularization must be positive");
    let n = vectors.len();
    let mean: Vec<f64> = (0..d).map(|k| vectors.iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
    // centred, augmented with a constant 1
    let xs: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).chain(std::iter::once(1.0)).collect())
        .collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let sq: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum()).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::new(cfg.seed);
    for _ in 0..cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut max_change = 0.0f64;
        for &i in &order {
            let g = ys[i] * dot(&w, &xs[i]) - 1.0;
            let new = (alpha[i] - g / sq[i]).clamp(0.0, cfg.c);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                for (wk, xk) in w.iter_mut().zip(&xs[i]) {
                    *wk += delta * ys[i] * xk;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < cfg.tolerance {
            break;
        }
    }
    let norm = w[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
    ensure_arg!(norm > 0.0, "degenerate boundary: zero normal");
    let normal: Vec<f64> = w[..d].iter().map(|v| v / norm).collect();
    let bias = (w[d] - dot(&w[..d], &mean)) / norm;
    Ok(SemanticBoundary { attribute: attribute.to_string(), normal, bias })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Signed distances of row-mean reduced codes.
pub fn classify_codes(b: &SemanticBoundary, codes: &[&LatentCode]) -> Result<Vec<f64>> {
    codes.iter().map(|c| b.score(&c.row_mean())).collect()
}
