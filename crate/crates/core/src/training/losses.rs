//! Encoder and discriminator objectives.
//!
//! Every L2 term is a root-sum-of-squares over the flattened per-sample
//! difference, averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, no_grad, Real, Tensor, Var};
use crate::error::{ensure_arg, Error, Result};
use crate::image::Image;
use crate::latent::LatentCode;
use crate::perception::FeatureExtractor;
use crate::synthesis::GeneratorModel;

use super::nets::{DiscriminatorModel, EncoderModel};

/// Per-sample `||a_i - b_i||_2` as `[N, 1]`.
pub fn per_sample_l2<T: Real>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let n = a.shape()[0];
    let k = a.value().numel() / n;
    a.sub(b).reshape(&[n, k]).square().sum_to(&[n, 1]).safe_sqrt()
}

/// Per-sample `sum(m * (a - b)^2)^(1/2)` with `m` broadcast over channels.
pub fn per_sample_masked_l2<T: Real>(a: &Var<T>, b: &Var<T>, mask: &Var<T>) -> Var<T> {
    let n = a.shape()[0];
    let k = a.value().numel() / n;
    a.sub(b).square().mul(mask).reshape(&[n, k]).sum_to(&[n, 1]).safe_sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLossTerms {
    /// `||x - G(E(x))||`
    pub pixel: f64,
    /// `||F(x) - F(G(E(x)))||`
    pub perceptual: f64,
    /// `D(G(E(x)))`
    pub adversarial: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorLossTerms {
    /// `E[D(G(E(x)))]`
    pub fake_score: f64,
    /// `E[D(x)]`
    pub real_score: f64,
    /// `E[||grad_x D(x)||^2]`
    pub gradient_penalty: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_vgg: f64,
    pub lambda_adv: f64,
}

fn mean_item<T: Real>(v: &Var<T>) -> f64 {
    v.value().data().iter().map(|x| x.to_f64().unwrap()).sum::<f64>() / v.value().numel() as f64
}

/// Assembles the domain-guided encoder objective from its parts:
/// `pixel + lambda_vgg * perceptual - lambda_adv * score`, each a batch mean.
pub fn encoder_objective<T: Real>(
    x: &Var<T>,
    recon: &Var<T>,
    feat_x: &Var<T>,
    feat_recon: &Var<T>,
    score_recon: &Var<T>,
    w: LossWeights,
) -> (Var<T>, EncoderLossTerms) {
    let pixel = per_sample_l2(x, recon);
    let perceptual = per_sample_l2(feat_x, feat_recon);
    let total = pixel
        .mean()
        .add(&perceptual.mean().scale(T::lit(w.lambda_vgg)))
        .sub(&score_recon.mean().scale(T::lit(w.lambda_adv)));
    let terms = EncoderLossTerms {
        pixel: mean_item(&pixel),
        perceptual: mean_item(&perceptual),
        adversarial: mean_item(score_recon),
        total: total.item().to_f64().unwrap(),
    };
    (total, terms)
}

/// `E[D(fake)] - E[D(real)] + gamma/2 * E[||grad_real||^2]`. The gradient
/// must have been built with `create_graph` for the penalty to train `D`.
pub fn discriminator_objective<T: Real>(
    score_fake: &Var<T>,
    score_real: &Var<T>,
    grad_real: &Var<T>,
    gamma: f64,
) -> (Var<T>, DiscriminatorLossTerms) {
    let n = grad_real.shape()[0];
    let k = grad_real.value().numel() / n;
    let sq = grad_real.reshape(&[n, k]).square().sum_to(&[n, 1]).mean();
    let total = score_fake.mean().sub(&score_real.mean()).add(&sq.scale(T::lit(gamma / 2.0)));
    let terms = DiscriminatorLossTerms {
        fake_score: mean_item(score_fake),
        real_score: mean_item(score_real),
        gradient_penalty: sq.item().to_f64().unwrap(),
        total: total.item().to_f64().unwrap(),
    };
    (total, terms)
}

/// Mean `||target - E(G(target))||` over a batch of W codes.
pub fn conventional_encoder_loss(e: &EncoderModel, g: &GeneratorModel, codes: &[&LatentCode]) -> Result<f64> {
    ensure_arg!(!codes.is_empty(), "no codes given");
    let images = g.generate_batch(codes)?;
    let refs: Vec<&Image> = images.iter().collect();
    let recovered = e.encode_batch(&refs)?;
    let rec_refs: Vec<&LatentCode> = recovered.iter().collect();
    Ok(code_distance(codes, &rec_refs))
}

/// Mean per-pair L2 distance between two code lists, in f64.
pub fn code_distance(a: &[&LatentCode], b: &[&LatentCode]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            x.values().iter().zip(y.values()).map(|(&p, &q)| ((p - q) as f64).powi(2)).sum::<f64>().sqrt()
        })
        .sum();
    sum / a.len() as f64
}

fn check_images(images: &[&Image], shape: [usize; 3]) -> Result<()> {
    ensure_arg!(!images.is_empty(), "no images given");
    for x in images {
        ensure_arg!(x.shape() == shape, "image shape {:?} does not match model input {:?}", x.shape(), shape);
    }
    Ok(())
}

/// Evaluates the domain-guided encoder objective on a batch of real images in
/// 64-bit arithmetic.
pub fn domain_guided_encoder_loss(
    e: &EncoderModel,
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    f: &FeatureExtractor,
    x_real: &[&Image],
    w: LossWeights,
) -> Result<EncoderLossTerms> {
    check_images(x_real, g.image_shape())?;
    let _ng = no_grad();
    let (ep, gp, dp, fp) = (e.bind::<f64>(false), g.bind::<f64>(false), d.bind::<f64>(false), f.bind::<f64>(false));
    let x = Var::constant(Image::batch::<f64>(x_real));
    let recon = g.synthesis_graph(&gp, &e.graph(&ep, &x));
    let (_, terms) = encoder_objective(
        &x,
        &recon,
        &f.features_graph(&fp, &x),
        &f.features_graph(&fp, &recon),
        &d.graph(&dp, &recon),
        w,
    );
    Ok(terms)
}

/// Evaluates the discriminator objective (with the gradient penalty on
/// reals) in 64-bit arithmetic.
pub fn discriminator_loss(
    d: &DiscriminatorModel,
    g: &GeneratorModel,
    e: &EncoderModel,
    x_real: &[&Image],
    gamma: f64,
) -> Result<DiscriminatorLossTerms> {
    check_images(x_real, g.image_shape())?;
    let (ep, gp, dp) = (e.bind::<f64>(false), g.bind::<f64>(false), d.bind::<f64>(false));
    let x: Tensor<f64> = Image::batch(x_real);
    let fake = {
        let _ng = no_grad();
        g.synthesis_graph(&gp, &e.graph(&ep, &Var::constant(x.clone())))
    };
    let real = Var::leaf(x);
    let sr = d.graph(&dp, &real);
    let gx = grad(&sr.sum(), &[&real], false).remove(0);
    let (_, terms) = discriminator_objective(&d.graph(&dp, &fake), &sr, &gx, gamma);
    if !terms.gradient_penalty.is_finite() {
        return Err(Error::TrainingFailure { step: 0, reason: "non-finite gradient norm".into() });
    }
    Ok(terms)
}
