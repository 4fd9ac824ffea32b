//! Instance-level inversion: per-image optimization of a W code under
//! pixel, perceptual and encoder-consistency terms.
//!
//! The objective for an image `x` and code `z` is
//! `||x - G(z)|| + lambda_vgg ||F(x) - F(G(z))|| + lambda_dom ||z - E(G(z))||`,
//! with the optional mask applied to the pixel term only. A batch of images is
//! optimized jointly; the per-image objectives share no parameters and Adam
//! is elementwise, so each image follows exactly its own trajectory.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, no_grad, Real, Tensor, Var};
use crate::error::{ensure_arg, Error, Result};
use crate::image::{Image, Mask};
use crate::latent::{sample_latent, LatentCode, Space};
use crate::nn::Adam;
use crate::perception::FeatureExtractor;
use crate::rng::SeededRng;
use crate::synthesis::GeneratorModel;
use crate::training::losses::{per_sample_l2, per_sample_masked_l2};
use crate::training::nets::EncoderModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// `E(x)`.
    #[default]
    Encoder,
    /// A seeded sample mapped to W and broadcast over layers.
    Random,
    /// `InversionConfig::given_code`.
    Given,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub lambda_vgg: f64,
    pub lambda_dom: f64,
    pub init: InitStrategy,
    pub steps: usize,
    pub step_size: f32,
    pub seed: u64,
    #[serde(skip)]
    pub mask: Option<Mask>,
    #[serde(skip)]
    pub given_code: Option<LatentCode>,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            lambda_vgg: 5e-5,
            lambda_dom: 2.0,
            init: InitStrategy::Encoder,
            steps: 200,
            step_size: 0.01,
            seed: 0,
            mask: None,
            given_code: None,
        }
    }
}

impl InversionConfig {
    /// Pixel-only optimization from a random code.
    pub fn mse_baseline() -> Self {
        InversionConfig { lambda_vgg: 0.0, lambda_dom: 0.0, init: InitStrategy::Random, ..Default::default() }
    }

    /// The encoder output with no optimization.
    pub fn encoder_only() -> Self {
        InversionConfig { steps: 0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.lambda_vgg >= 0.0 && self.lambda_dom >= 0.0,
            "loss weights must be non-negative"
        );
        ensure_arg!(self.step_size > 0.0 && self.step_size.is_finite(), "step size must be positive");
        ensure_arg!(
            self.init != InitStrategy::Given || self.given_code.is_some(),
            "init=given requires a code"
        );
        Ok(())
    }
}

/// Objective terms for one image at one code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub pixel: f64,
    pub perceptual: f64,
    pub regularizer: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    #[serde(flatten)]
    pub terms: Breakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// Best code by total over all evaluated steps.
    pub code: LatentCode,
    /// `generate(G, code)`.
    pub reconstruction: Image,
    /// One record per evaluated code; record `k` is the code after `k` updates.
    pub trace: Vec<TraceRecord>,
    pub init_code: LatentCode,
    pub steps_used: usize,
    pub best_step: usize,
}

impl InversionResult {
    pub fn initial(&self) -> &Breakdown {
        &self.trace[0].terms
    }

    pub fn best(&self) -> &Breakdown {
        &self.trace[self.best_step].terms
    }

    /// First step whose total is at or below `threshold`.
    pub fn steps_to_total(&self, threshold: f64) -> Option<usize> {
        self.trace.iter().find(|r| r.terms.total <= threshold).map(|r| r.step)
    }

    /// First step whose pixel term (squared, per element) is at or below `mse`.
    pub fn steps_to_pixel_mse(&self, mse: f64) -> Option<usize> {
        let n = self.reconstruction.pixels().len() as f64;
        self.trace.iter().find(|r| r.terms.pixel * r.terms.pixel / n <= mse).map(|r| r.step)
    }

    pub fn write_trace_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// The models an inversion reads.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub g: &'a GeneratorModel,
    pub e: &'a EncoderModel,
    pub f: &'a FeatureExtractor,
}

impl<'a> Models<'a> {
    pub fn new(g: &'a GeneratorModel, e: &'a EncoderModel, f: &'a FeatureExtractor) -> Self {
        Models { g, e, f }
    }

    fn check_image(&self, x: &Image) -> Result<()> {
        ensure_arg!(
            x.shape() == self.g.image_shape(),
            "image shape {:?} does not match generator output {:?}",
            x.shape(),
            self.g.image_shape()
        );
        Ok(())
    }

    fn check_code(&self, z: &LatentCode) -> Result<()> {
        ensure_arg!(
            z.space() == Space::W && z.layers() == self.g.num_layers() && z.width() == self.g.latent_dim(),
            "code must be W-space [{}, {}]",
            self.g.num_layers(),
            self.g.latent_dim()
        );
        Ok(())
    }

    fn check_mask(&self, mask: &Option<Mask>) -> Result<()> {
        if let Some(m) = mask {
            let [_, h, w] = self.g.image_shape();
            ensure_arg!(m.height() == h && m.width() == w, "mask does not match image size");
            if m.support() <= 0.0 {
                return Err(Error::DegenerateMask);
            }
        }
        Ok(())
    }
}

/// Per-image objective terms as graph nodes, each `[N, 1]`. Terms with zero
/// weight are evaluated on detached inputs so they do not enter the gradient.
struct Terms<T: Real> {
    pixel: Var<T>,
    perceptual: Var<T>,
    regularizer: Var<T>,
    total: Var<T>,
}

fn objective_graph<T: Real>(
    m: Models,
    x: &Tensor<T>,
    feat_x: &Var<T>,
    z: &Var<T>,
    mask: Option<&Var<T>>,
    lambda_vgg: f64,
    lambda_dom: f64,
) -> Terms<T> {
    let (gp, ep, fp) = (m.g.bind::<T>(false), m.e.bind::<T>(false), m.f.bind::<T>(false));
    let xv = Var::constant(x.clone());
    let recon = m.g.synthesis_graph(&gp, z);
    let pixel = match mask {
        Some(mv) => per_sample_masked_l2(&xv, &recon, mv),
        None => per_sample_l2(&xv, &recon),
    };
    let gated = |w: f64| if w > 0.0 { recon.clone() } else { recon.detach() };
    let perceptual = per_sample_l2(feat_x, &m.f.features_graph(&fp, &gated(lambda_vgg)));
    let zr = if lambda_dom > 0.0 { z.clone() } else { z.detach() };
    let regularizer = per_sample_l2(&zr, &m.e.graph(&ep, &gated(lambda_dom)));
    let total = pixel
        .add(&perceptual.scale(T::lit(lambda_vgg)))
        .add(&regularizer.scale(T::lit(lambda_dom)));
    Terms { pixel, perceptual, regularizer, total }
}

fn features_of<T: Real>(f: &FeatureExtractor, x: &Tensor<T>) -> Var<T> {
    let _ng = no_grad();
    f.features_graph(&f.bind::<T>(false), &Var::constant(x.clone()))
}

fn mask_var<T: Real>(mask: &Option<Mask>) -> Option<Var<T>> {
    mask.as_ref().map(|m| {
        let w = m.weights().iter().map(|&v| T::lit(v as f64)).collect();
        Var::constant(Tensor::new(vec![1, 1, m.height(), m.width()], w))
    })
}

fn breakdowns<T: Real>(t: &Terms<T>) -> Vec<Breakdown> {
    let col = |v: &Var<T>| -> Vec<f64> { v.value().data().iter().map(|x| x.to_f64().unwrap()).collect() };
    let (p, q, r, s) = (col(&t.pixel), col(&t.perceptual), col(&t.regularizer), col(&t.total));
    (0..p.len()).map(|i| Breakdown { pixel: p[i], perceptual: q[i], regularizer: r[i], total: s[i] }).collect()
}

/// Evaluates the objective for one image and code in 64-bit arithmetic.
pub fn inversion_objective(m: Models, x: &Image, z: &LatentCode, cfg: &InversionConfig) -> Result<Breakdown> {
    inversion_objective_in::<f64>(m, x, z, cfg)
}

/// [`inversion_objective`] in a chosen precision. Images and codes are
/// stored in `f32`, so only `f32` evaluation sees a rendered image as an
/// exact reconstruction of its code.
pub fn inversion_objective_in<T: Real>(m: Models, x: &Image, z: &LatentCode, cfg: &InversionConfig) -> Result<Breakdown> {
    m.check_image(x)?;
    m.check_code(z)?;
    m.check_mask(&cfg.mask)?;
    let _ng = no_grad();
    let xt: Tensor<T> = Image::batch(&[x]);
    let zv = Var::constant(LatentCode::batch::<T>(&[z]));
    let mv = mask_var::<T>(&cfg.mask);
    let t = objective_graph(m, &xt, &features_of(m.f, &xt), &zv, mv.as_ref(), cfg.lambda_vgg, cfg.lambda_dom);
    Ok(breakdowns(&t)[0])
}

/// Analytic gradient of the objective with respect to the code.
pub fn objective_gradient<T: Real>(m: Models, x: &Image, z: &LatentCode, cfg: &InversionConfig) -> Result<Vec<f64>> {
    m.check_image(x)?;
    m.check_code(z)?;
    m.check_mask(&cfg.mask)?;
    let xt: Tensor<T> = Image::batch(&[x]);
    let zv = Var::leaf(LatentCode::batch::<T>(&[z]));
    let mv = mask_var::<T>(&cfg.mask);
    let t = objective_graph(m, &xt, &features_of(m.f, &xt), &zv, mv.as_ref(), cfg.lambda_vgg, cfg.lambda_dom);
    let g = grad(&t.total.sum(), &[&zv], false).remove(0);
    Ok(g.value().data().iter().map(|v| v.to_f64().unwrap()).collect())
}

/// Largest relative error between the analytic gradient and central finite
/// differences over `coords` random code coordinates, in 64-bit arithmetic.
pub fn gradient_check(
    m: Models,
    x: &Image,
    z: &LatentCode,
    cfg: &InversionConfig,
    coords: usize,
    seed: u64,
) -> Result<f64> {
    let analytic = objective_gradient::<f64>(m, x, z, cfg)?;
    let xt: Tensor<f64> = Image::batch(&[x]);
    let feat_x = features_of(m.f, &xt);
    let mv = mask_var::<f64>(&cfg.mask);
    let z0: Tensor<f64> = LatentCode::batch(&[z]);
    let eval = |t: Tensor<f64>| {
        let _ng = no_grad();
        let terms = objective_graph(m, &xt, &feat_x, &Var::constant(t), mv.as_ref(), cfg.lambda_vgg, cfg.lambda_dom);
        terms.total.item()
    };
    let h = 1e-6;
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let i = rng.below(z0.numel());
        let mut up = z0.clone();
        up.data_mut()[i] += h;
        let mut dn = z0.clone();
        dn.data_mut()[i] -= h;
        let fd = (eval(up) - eval(dn)) / (2.0 * h);
        let a = analytic[i];
        let rel = (fd - a).abs() / (fd.abs().max(a.abs())).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn initial_codes(m: Models, xs: &[&Image], cfg: &InversionConfig) -> Result<Vec<LatentCode>> {
    match cfg.init {
        InitStrategy::Encoder => m.e.encode_batch(xs),
        InitStrategy::Given => {
            let z = cfg.given_code.clone().ok_or_else(|| crate::error::invalid("init=given requires a code"))?;
            m.check_code(&z)?;
            Ok(vec![z; xs.len()])
        }
        InitStrategy::Random => {
            let mut rng = SeededRng::new(cfg.seed);
            let zs = sample_latent(&mut rng, xs.len(), m.g.latent_dim())?;
            m.g.map_z_to_w(&zs)?.into_iter().map(|w| w.broadcast(m.g.num_layers())).collect()
        }
    }
}

pub fn invert(m: Models, x: &Image, cfg: &InversionConfig) -> Result<InversionResult> {
    Ok(invert_batch(m, &[x], cfg)?.remove(0))
}

/// Inverts each image independently; the random init draws one code per
/// image from the config seed in order.
pub fn invert_batch(m: Models, xs: &[&Image], cfg: &InversionConfig) -> Result<Vec<InversionResult>> {
    cfg.validate()?;
    for x in xs {
        m.check_image(x)?;
    }
    m.check_mask(&cfg.mask)?;
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let inits = initial_codes(m, xs, cfg)?;
    let init_refs: Vec<&LatentCode> = inits.iter().collect();
    let n = xs.len();
    let (layers, width) = (m.g.num_layers(), m.g.latent_dim());
    let per = layers * width;

    let xt: Tensor<f32> = Image::batch(xs);
    let feat_x = features_of(m.f, &xt);
    let mv = mask_var::<f32>(&cfg.mask);
    let mut z: Tensor<f32> = LatentCode::batch(&init_refs);
    let mut best_codes = z.data().to_vec();
    let mut best_totals = vec![f64::INFINITY; n];
    let mut best_steps = vec![0usize; n];
    let mut traces: Vec<Vec<TraceRecord>> = vec![Vec::with_capacity(cfg.steps + 1); n];
    let mut opt = Adam::new(cfg.step_size, 0.9, 0.999);

    for step in 0..=cfg.steps {
        let last = step == cfg.steps;
        let zv = if last { Var::constant(z.clone()) } else { Var::leaf(z.clone()) };
        let (terms, gz) = {
            let _ng = last.then(no_grad);
            let t = objective_graph(m, &xt, &feat_x, &zv, mv.as_ref(), cfg.lambda_vgg, cfg.lambda_dom);
            let gz = (!last).then(|| grad(&t.total.sum(), &[&zv], false).remove(0).value().clone());
            (breakdowns(&t), gz)
        };
        for (i, b) in terms.iter().enumerate() {
            if !b.total.is_finite() {
                let tail = traces[i].iter().rev().take(5).rev().map(|r| r.terms.total).collect();
                return Err(Error::InversionFailure { step, reason: "non-finite objective".into(), trace_tail: tail });
            }
            traces[i].push(TraceRecord { step, terms: *b });
            if b.total < best_totals[i] {
                best_totals[i] = b.total;
                best_steps[i] = step;
                best_codes[i * per..(i + 1) * per].copy_from_slice(&z.data()[i * per..(i + 1) * per]);
            }
        }
        if let Some(gz) = gz {
            opt.step([z.data_mut()], &[gz.data()]);
        }
    }

    let codes: Vec<LatentCode> = (0..n)
        .map(|i| LatentCode::new(Space::W, layers, width, best_codes[i * per..(i + 1) * per].to_vec()))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n);
    for (i, (code, (trace, init_code))) in codes.into_iter().zip(traces.into_iter().zip(inits)).enumerate() {
        let reconstruction = m.g.generate(&code)?;
        out.push(InversionResult {
            code,
            reconstruction,
            trace,
            init_code,
            steps_used: cfg.steps,
            best_step: best_steps[i],
        });
    }
    Ok(out)
}
