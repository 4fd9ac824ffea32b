//! Pixel, patch-distribution and feature-distribution distances between
//! image sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::image::{mse, Image};
use crate::perception::FeatureExtractor;
use crate::rng::SeededRng;

/// Mean over pairs of per-image pixel MSE.
pub fn mse_metric(a: &[&Image], b: &[&Image]) -> Result<f64> {
    ensure_arg!(a.len() == b.len(), "paired sets differ in length: {} vs {}", a.len(), b.len());
    ensure_arg!(!a.is_empty(), "empty image sets");
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += mse(x, y)?;
    }
    Ok(s / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwdConfig {
    pub patch: usize,
    pub projections: usize,
    /// Spacing of the patch grid; patches are taken at every `stride` pixels.
    pub stride: usize,
    pub seed: u64,
}

impl Default for SwdConfig {
    fn default() -> Self {
        SwdConfig { patch: 7, projections: 128, stride: 4, seed: 0 }
    }
}

/// Flattened `C x patch x patch` descriptors on a regular grid.
pub fn patch_descriptors(images: &[&Image], patch: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    ensure_arg!(patch >= 1 && stride >= 1, "patch size and stride must be positive");
    let mut out = Vec::new();
    for im in images {
        ensure_arg!(im.height() >= patch && im.width() >= patch, "image smaller than the patch");
        for y in (0..=im.height() - patch).step_by(stride) {
            for x in (0..=im.width() - patch).step_by(stride) {
                let mut d = Vec::with_capacity(im.channels() * patch * patch);
                for c in 0..im.channels() {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            d.push(im.get(c, y + dy, x + dx) as f64);
                        }
                    }
                }
                out.push(d);
            }
        }
    }
    Ok(out)
}

/// Seeded directions drawn uniformly on the unit sphere.
pub fn random_projections(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = rng.normals(dim).into_iter().map(f64::from).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Exact Wasserstein-1 distance between two empirical 1-D distributions:
/// the integral of `|Fa^-1(u) - Fb^-1(u)|` over `u` in `[0, 1]`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_arg!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / na as f64);
    }
    // walk the merged quantile breakpoints k/na and k/nb
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let ua = (i + 1) as f64 / na as f64;
        let ub = (j + 1) as f64 / nb as f64;
        let next = ua.min(ub);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if ua <= ub {
            i += 1;
        }
        if ub <= ua {
            j += 1;
        }
    }
    Ok(total)
}

/// Mean 1-D Wasserstein distance over the given projections.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], projections: &[Vec<f64>]) -> Result<f64> {
    ensure_arg!(!a.is_empty() && !b.is_empty(), "empty descriptor set");
    ensure_arg!(!projections.is_empty(), "no projections");
    let dim = a[0].len();
    ensure_arg!(
        a.iter().chain(b).all(|v| v.len() == dim) && projections.iter().all(|p| p.len() == dim),
        "descriptor widths differ"
    );
    let project = |set: &[Vec<f64>], p: &[f64]| -> Vec<f64> {
        set.iter().map(|v| v.iter().zip(p).map(|(x, w)| x * w).sum()).collect()
    };
    let mut s = 0.0;
    for p in projections {
        s += wasserstein_1d(&project(a, p), &project(b, p))?;
    }
    Ok(s / projections.len() as f64)
}

/// Single-level sliced Wasserstein distance over patch descriptors.
pub fn swd(a: &[&Image], b: &[&Image], cfg: &SwdConfig) -> Result<f64> {
    ensure_arg!(!a.is_empty() && !b.is_empty(), "empty image set");
    ensure_arg!(a[0].channels() == b[0].channels(), "image sets differ in channels");
    let da = patch_descriptors(a, cfg.patch, cfg.stride)?;
    let db = patch_descriptors(b, cfg.patch, cfg.stride)?;
    let proj = random_projections(da[0].len(), cfg.projections, cfg.seed);
    sliced_wasserstein(&da, &db, &proj)
}

/// Sample mean and unbiased covariance.
pub fn moments(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    ensure_arg!(features.len() >= 2, "need at least two samples for a covariance");
    let d = features[0].len();
    ensure_arg!(features.iter().all(|f| f.len() == d), "feature widths differ");
    let n = features.len();
    let x = DMatrix::from_fn(n, d, |i, k| features[i][k]);
    let mu = DVector::from_fn(d, |k, _| x.column(k).sum() / n as f64);
    let mut centred = x;
    for k in 0..d {
        let m = mu[k];
        centred.column_mut(k).add_scalar_mut(-m);
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    Ok((mu, cov))
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !lo.is_finite() || lo < -1e-8 * scale {
        return Err(Error::MetricFailure(format!(
            "{what} is not positive semi-definite (min eigenvalue {lo:.3e}, max |eigenvalue| {scale:.3e})"
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`, with the trace of
/// the cross term computed as `tr((Sa^(1/2) Sb Sa^(1/2))^(1/2))`.
pub fn frechet_distance(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    ensure_arg!(
        mu_a.len() == mu_b.len() && cov_a.nrows() == mu_a.len() && cov_b.nrows() == mu_b.len(),
        "moment dimensions differ"
    );
    let sa = psd_sqrt(cov_a, "first covariance")?;
    let cross = psd_sqrt(&(&sa * cov_b * &sa), "covariance product")?;
    let v = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    if !v.is_finite() {
        return Err(Error::MetricFailure("non-finite Frechet distance".into()));
    }
    Ok(v.max(0.0))
}

pub fn frechet_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    frechet_distance(&ma, &ca, &mb, &cb)
}

/// Frechet distance between the extractor's pooled embeddings of two sets.
pub fn ffd(a: &[&Image], b: &[&Image], f: &FeatureExtractor) -> Result<f64> {
    let dim = f.config().embedding_dim();
    if a.len().min(b.len()) < dim {
        log::warn!("FFD with {} and {} samples for {dim}-dimensional features is poorly conditioned", a.len(), b.len());
    }
    frechet_from_features(&f.embed(a)?, &f.embed(b)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: Option<f64>,
    pub swd: Option<f64>,
    pub ffd: Option<f64>,
    pub count_a: usize,
    pub count_b: usize,
    pub swd_config: SwdConfig,
    /// SWD is computed at a single resolution level.
    pub swd_levels: usize,
}

/// Computes every metric that applies: MSE only for equal-length sets, FFD
/// only with an extractor.
pub fn metric_report(a: &[&Image], b: &[&Image], f: Option<&FeatureExtractor>, swd_cfg: &SwdConfig) -> Result<MetricReport> {
    let mse = if a.len() == b.len() { Some(mse_metric(a, b)?) } else { None };
    let ffd = match f {
        Some(f) => Some(ffd(a, b, f)?),
        None => None,
    };
    Ok(MetricReport {
        mse,
        swd: Some(swd(a, b, swd_cfg)?),
        ffd,
        count_a: a.len(),
        count_b: b.len(),
        swd_config: *swd_cfg,
        swd_levels: 1,
    })
}
