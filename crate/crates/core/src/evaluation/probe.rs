//! Attribute probing of inverted codes.
//!
//! Boundaries are fitted on generator samples labelled by the attribute
//! classifier. Real images with ground-truth labels are then inverted by each
//! inverter, and the codes' signed distances to each boundary are scored
//! against the true labels as precision-recall curves.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};
use crate::image::{mse, Image};
use crate::inversion::{invert_batch, InversionConfig, InversionResult, Models};
use crate::latent::LatentCode;
use crate::rng::SeededRng;

use super::boundary::{classify_codes, fit_boundary, SemanticBoundary};
use super::pr::{pr_curve, PrCurve};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inverter {
    pub name: String,
    pub config: InversionConfig,
}

impl Inverter {
    pub fn new(name: &str, config: InversionConfig) -> Self {
        Inverter { name: name.to_string(), config }
    }

    pub fn in_domain() -> Self {
        Inverter::new("in-domain", InversionConfig::default())
    }

    pub fn mse_only() -> Self {
        Inverter::new("mse-only", InversionConfig::mse_baseline())
    }

    pub fn encoder_only() -> Self {
        Inverter::new("encoder-only", InversionConfig::encoder_only())
    }

    /// Seeded random codes with no optimization: the chance baseline.
    pub fn random_codes() -> Self {
        Inverter::new("random", InversionConfig { steps: 0, ..InversionConfig::mse_baseline() })
    }
}

/// Fits one boundary per classifier output on `n` generator samples.
pub fn fit_probe_boundaries(m: Models, attributes: &[&str], n: usize, seed: u64) -> Result<Vec<SemanticBoundary>> {
    ensure_arg!(attributes.len() == m.f.config().outputs, "attribute names do not match classifier outputs");
    let (codes, images) = m.g.sample(&mut SeededRng::new(seed), n)?;
    let probs = m.f.predict(&images.iter().collect::<Vec<_>>())?;
    let refs: Vec<&LatentCode> = codes.iter().collect();
    attributes
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let labels: Vec<bool> = probs.iter().map(|p| p[k] >= 0.5).collect();
            fit_boundary(&refs, &labels, name)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverterReport {
    pub name: String,
    pub curves: Vec<PrCurve>,
    /// Per-image pixel MSE of the reconstruction against its input.
    pub reconstruction_mse: Vec<f64>,
}

impl InverterReport {
    pub fn aucs(&self) -> Vec<f64> {
        self.curves.iter().map(|c| c.auc).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub boundaries: Vec<SemanticBoundary>,
    /// Fraction of positives per attribute among the probed images.
    pub prevalence: Vec<f64>,
    pub inverters: Vec<InverterReport>,
}

impl ProbeReport {
    pub fn inverter(&self, name: &str) -> Option<&InverterReport> {
        self.inverters.iter().find(|r| r.name == name)
    }
}

/// PR curves of codes against each boundary with per-image labels.
pub fn score_codes(boundaries: &[SemanticBoundary], codes: &[&LatentCode], labels: &[Vec<bool>]) -> Result<Vec<PrCurve>> {
    ensure_arg!(codes.len() == labels.len(), "{} codes but {} label rows", codes.len(), labels.len());
    boundaries
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let scores = classify_codes(b, codes)?;
            let y: Vec<bool> = labels.iter().map(|l| l[k]).collect();
            pr_curve(&scores, &y)
        })
        .collect()
}

/// Inverts in chunks to bound graph memory.
pub fn invert_all(m: Models, images: &[&Image], cfg: &InversionConfig, chunk: usize) -> Result<Vec<InversionResult>> {
    let mut out = Vec::with_capacity(images.len());
    for (i, part) in images.chunks(chunk.max(1)).enumerate() {
        // each chunk draws its random inits from its own stream
        let c = InversionConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
        out.extend(invert_batch(m, part, &c)?);
    }
    Ok(out)
}

pub fn semantic_probe_experiment(
    m: Models,
    inverters: &[Inverter],
    images: &[&Image],
    labels: &[Vec<bool>],
    boundaries: &[SemanticBoundary],
) -> Result<ProbeReport> {
    ensure_arg!(!images.is_empty(), "no images to probe");
    ensure_arg!(images.len() == labels.len(), "{} images but {} label rows", images.len(), labels.len());
    ensure_arg!(labels.iter().all(|l| l.len() == boundaries.len()), "label width does not match boundary count");
    let prevalence = (0..boundaries.len())
        .map(|k| labels.iter().filter(|l| l[k]).count() as f64 / labels.len() as f64)
        .collect();
    let mut reports = Vec::with_capacity(inverters.len());
    for inv in inverters {
        let results = invert_all(m, images, &inv.config, 50)?;
        let codes: Vec<&LatentCode> = results.iter().map(|r| &r.code).collect();
        let reconstruction_mse =
            results.iter().zip(images).map(|(r, x)| mse(&r.reconstruction, x)).collect::<Result<Vec<_>>>()?;
        reports.push(InverterReport {
            name: inv.name.clone(),
            curves: score_codes(boundaries, &codes, labels)?,
            reconstruction_mse,
        });
    }
    Ok(ProbeReport { boundaries: boundaries.to_vec(), prevalence, inverters: reports })
}
