use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, no_grad, Tensor, Var};
use crate::error::{ensure_arg, Error, Result};
use crate::image::Image;
use crate::latent::{sample_latent, LatentCode};
use crate::nn::Adam;
use crate::perception::FeatureExtractor;
use crate::rng::SeededRng;
use crate::synthesis::{GeneratorConfig, GeneratorModel};
use crate::tower::TowerConfig;
use crate::workspace::dataset::Dataset;

use super::losses::{discriminator_objective, encoder_objective, per_sample_l2, LossWeights};
use super::nets::{DiscriminatorConfig, DiscriminatorModel, EncoderConfig, EncoderModel};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub terms: BTreeMap<String, f64>,
}

impl StepRecord {
    fn new(step: usize, terms: &[(&str, f64)]) -> Self {
        StepRecord { step, terms: terms.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    pub fn get(&self, term: &str) -> Option<f64> {
        self.terms.get(term).copied()
    }
}

/// Writes records as line-delimited JSON.
pub fn write_jsonl<W: Write>(records: &[StepRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingFailure { step, reason: format!("non-finite {what}") })
    }
}

fn sample_batch<'a>(rng: &mut SeededRng, data: &'a Dataset, n: usize) -> Vec<&'a Image> {
    (0..n).map(|_| &data.images[rng.below(data.len())]).collect()
}

/// Generator samples with their broadcast W codes, computed without a graph.
fn sample_codes(g: &GeneratorModel, rng: &mut SeededRng, n: usize) -> Result<Tensor<f32>> {
    let zs = sample_latent(rng, n, g.latent_dim())?;
    let codes = g
        .map_z_to_w(&zs)?
        .into_iter()
        .map(|w| w.broadcast(g.num_layers()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&LatentCode> = codes.iter().collect();
    Ok(LatentCode::batch(&refs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub gamma: f64,
    /// The gradient penalty is applied every this many steps, scaled up to match.
    pub r1_interval: usize,
    pub seed: u64,
}

impl GanConfig {
    pub fn new(generator: GeneratorConfig, steps: usize) -> Self {
        let levels = generator.resolution.trailing_zeros() as usize - 2;
        let width = generator.feature_maps[0];
        let discriminator = DiscriminatorConfig {
            tower: TowerConfig {
                resolution: generator.resolution,
                channels: generator.channels,
                feature_maps: vec![width; levels + 1],
            },
            hidden: width,
        };
        GanConfig {
            generator,
            discriminator,
            steps,
            batch_size: 16,
            learning_rate: 2e-3,
            gamma: 10.0,
            r1_interval: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.tower.validate()?;
        ensure_arg!(self.steps >= 1, "steps must be at least 1");
        ensure_arg!(self.batch_size >= 1, "batch size must be positive");
        ensure_arg!(self.gamma >= 0.0, "gamma must be non-negative");
        ensure_arg!(self.r1_interval >= 1, "r1 interval must be at least 1");
        ensure_arg!(
            self.discriminator.tower.resolution == self.generator.resolution
                && self.discriminator.tower.channels == self.generator.channels,
            "discriminator input does not match generator output"
        );
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    /// Frozen.
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub log: Vec<StepRecord>,
}

/// Non-saturating logistic GAN with a lazy gradient penalty on reals.
pub fn train_gan(data: &Dataset, cfg: &GanConfig) -> Result<GanOutcome> {
    cfg.validate()?;
    ensure_arg!(!data.is_empty(), "dataset is empty");
    let mut rng = SeededRng::new(cfg.seed);
    let mut g = GeneratorModel::new(cfg.generator.clone(), &mut rng)?;
    let mut d = DiscriminatorModel::new(cfg.discriminator.clone(), &mut rng)?;
    ensure_arg!(
        data.image_shape() == Some(g.image_shape()),
        "dataset images {:?} do not match generator output {:?}",
        data.image_shape(),
        g.image_shape()
    );
    let (n, dim, layers) = (cfg.batch_size, g.latent_dim(), g.num_layers());
    let mut opt_g = Adam::new(cfg.learning_rate, 0.0, 0.99);
    let mut opt_d = Adam::new(cfg.learning_rate, 0.0, 0.99);
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        // discriminator
        let fake = {
            let _ng = no_grad();
            let gp = g.bind::<f32>(false);
            let z = Var::constant(Tensor::new(vec![n, dim], rng.normals(n * dim)));
            let w = g.mapping_graph(&gp, &z).reshape(&[n, 1, dim]).broadcast_to(&[n, layers, dim]);
            g.synthesis_graph(&gp, &w).value().clone()
        };
        let real = Image::batch::<f32>(&sample_batch(&mut rng, data, n));
        let lazy = step % cfg.r1_interval == 0 && cfg.gamma > 0.0;
        let (d_loss, penalty, grads) = {
            let dp = d.bind::<f32>(true);
            let real = Var::leaf(real);
            let sr = d.graph(&dp, &real);
            let sf = d.graph(&dp, &Var::constant(fake));
            let mut loss = sf.softplus().mean().add(&sr.neg().softplus().mean());
            let mut penalty = f64::NAN;
            if lazy {
                let gx = grad(&sr.sum(), &[&real], true).remove(0);
                let sq = gx.reshape(&[n, gx.value().numel() / n]).square().sum_to(&[n, 1]).mean();
                penalty = sq.item() as f64;
                loss = loss.add(&sq.scale((cfg.gamma / 2.0 * cfg.r1_interval as f64) as f32));
            }
            (loss.item() as f64, penalty, dp.grads(&loss))
        };
        check_finite(step, "discriminator loss", d_loss)?;
        opt_d.step_params(d.params_mut(), &grads);

        // generator
        let (g_loss, grads) = {
            let gp = g.bind::<f32>(true);
            let dp = d.bind::<f32>(false);
            let z = Var::constant(Tensor::new(vec![n, dim], rng.normals(n * dim)));
            let w = g.mapping_graph(&gp, &z).reshape(&[n, 1, dim]).broadcast_to(&[n, layers, dim]);
            let loss = d.graph(&dp, &g.synthesis_graph(&gp, &w)).neg().softplus().mean();
            (loss.item() as f64, gp.grads(&loss))
        };
        check_finite(step, "generator loss", g_loss)?;
        opt_g.step_params(g.params_mut()?, &grads);

        let mut rec = StepRecord::new(step, &[("d_loss", d_loss), ("g_loss", g_loss)]);
        if lazy {
            rec.terms.insert("r1".into(), penalty);
        }
        log.push(rec);
    }
    g.freeze();
    Ok(GanOutcome { generator: g, discriminator: d, log })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda_vgg: f64,
    pub lambda_adv: f64,
    pub gamma: f64,
    pub lr_encoder: f32,
    pub lr_discriminator: f32,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Encoder tower widths; defaults to `max(32, d)` at every level.
    #[serde(default)]
    pub encoder_feature_maps: Option<Vec<usize>>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda_vgg: 5e-5,
            lambda_adv: 0.1,
            gamma: 10.0,
            lr_encoder: 1e-4,
            lr_discriminator: 1e-4,
            batch_size: 16,
            steps: 20_000,
            seed: 0,
            encoder_feature_maps: None,
        }
    }
}

impl TrainingConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda_vgg: self.lambda_vgg, lambda_adv: self.lambda_adv }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.lambda_vgg >= 0.0 && self.lambda_adv >= 0.0 && self.gamma >= 0.0,
            "loss weights must be non-negative"
        );
        ensure_arg!(self.steps >= 1, "steps must be at least 1");
        ensure_arg!(self.batch_size >= 1, "batch size must be positive");
        Ok(())
    }

    pub fn encoder_config(&self, g: &GeneratorModel) -> EncoderConfig {
        let levels = g.config().resolution.trailing_zeros() as usize - 2;
        let maps = self.encoder_feature_maps.clone().unwrap_or_else(|| vec![g.latent_dim().max(32); levels + 1]);
        EncoderConfig::for_generator(g, maps)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutcome {
    pub encoder: EncoderModel,
    /// Present for domain-guided training only.
    pub discriminator: Option<DiscriminatorModel>,
    pub log: Vec<StepRecord>,
}

fn new_encoder(g: &GeneratorModel, cfg: &TrainingConfig, rng: &mut SeededRng) -> Result<EncoderModel> {
    let mean = g.mean_w(&mut rng.fork(1), 1024)?;
    EncoderModel::new(cfg.encoder_config(g), &mean, rng)
}

/// Trains `E` on generator samples only, regressing the sampled W code.
pub fn train_conventional_encoder(g: &GeneratorModel, cfg: &TrainingConfig) -> Result<EncoderOutcome> {
    cfg.validate()?;
    ensure_arg!(g.is_frozen(), "generator must be frozen");
    let mut rng = SeededRng::new(cfg.seed);
    let mut e = new_encoder(g, cfg, &mut rng)?;
    let mut opt = Adam::new(cfg.lr_encoder, 0.9, 0.99);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let codes = sample_codes(g, &mut rng, cfg.batch_size)?;
        let images = {
            let _ng = no_grad();
            g.synthesis_graph(&g.bind::<f32>(false), &Var::constant(codes.clone())).value().clone()
        };
        let (loss, grads) = {
            let ep = e.bind::<f32>(true);
            let rec = e.graph(&ep, &Var::constant(images));
            let loss = per_sample_l2(&Var::constant(codes), &rec).mean();
            (loss.item() as f64, ep.grads(&loss))
        };
        check_finite(step, "code loss", loss)?;
        opt.step_params(e.params_mut(), &grads);
        log.push(StepRecord::new(step, &[("code", loss)]));
    }
    Ok(EncoderOutcome { encoder: e, discriminator: None, log })
}

/// Alternates one encoder step on the reconstruction/perceptual/adversarial
/// objective with one discriminator step on the score-difference objective
/// with the gradient penalty on reals.
pub fn train_domain_guided_encoder(
    g: &GeneratorModel,
    d_init: &DiscriminatorModel,
    f: &FeatureExtractor,
    data: &Dataset,
    cfg: &TrainingConfig,
) -> Result<EncoderOutcome> {
    cfg.validate()?;
    ensure_arg!(g.is_frozen(), "generator must be frozen");
    ensure_arg!(f.is_frozen(), "feature extractor must be frozen");
    ensure_arg!(!data.is_empty(), "dataset is empty");
    ensure_arg!(
        data.image_shape() == Some(g.image_shape()),
        "dataset images {:?} do not match generator output {:?}",
        data.image_shape(),
        g.image_shape()
    );
    let mut rng = SeededRng::new(cfg.seed);
    let mut e = new_encoder(g, cfg, &mut rng)?;
    let mut d = d_init.clone();
    let mut opt_e = Adam::new(cfg.lr_encoder, 0.9, 0.99);
    let mut opt_d = Adam::new(cfg.lr_discriminator, 0.9, 0.99);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let x = Image::batch::<f32>(&sample_batch(&mut rng, data, cfg.batch_size));
        let (et, recon) = encoder_step(&mut e, &mut opt_e, g, &d, f, &x, cfg.weights());
        check_finite(step, "encoder loss", et.total)?;
        let dt = discriminator_step(&mut d, &mut opt_d, recon, x, cfg.gamma);
        check_finite(step, "discriminator loss", dt.total)?;
        log.push(StepRecord::new(
            step,
            &[
                ("pixel", et.pixel),
                ("perceptual", et.perceptual),
                ("adversarial", et.adversarial),
                ("encoder_total", et.total),
                ("fake_score", dt.fake_score),
                ("real_score", dt.real_score),
                ("gradient_penalty", dt.gradient_penalty),
                ("discriminator_total", dt.total),
            ],
        ));
    }
    Ok(EncoderOutcome { encoder: e, discriminator: Some(d), log })
}

/// One encoder update; returns the pre-update terms and the reconstruction.
pub(crate) fn encoder_step(
    e: &mut EncoderModel,
    opt: &mut Adam,
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    f: &FeatureExtractor,
    x: &Tensor<f32>,
    w: LossWeights,
) -> (super::losses::EncoderLossTerms, Tensor<f32>) {
    let (terms, recon, grads) = {
        let (ep, gp, dp, fp) = (e.bind::<f32>(true), g.bind::<f32>(false), d.bind::<f32>(false), f.bind::<f32>(false));
        let xv = Var::constant(x.clone());
        let recon = g.synthesis_graph(&gp, &e.graph(&ep, &xv));
        let feat_x = {
            let _ng = no_grad();
            f.features_graph(&fp, &xv)
        };
        let (loss, terms) =
            encoder_objective(&xv, &recon, &feat_x, &f.features_graph(&fp, &recon), &d.graph(&dp, &recon), w);
        (terms, recon.value().clone(), ep.grads(&loss))
    };
    if terms.total.is_finite() {
        opt.step_params(e.params_mut(), &grads);
    }
    (terms, recon)
}

pub(crate) fn discriminator_step(
    d: &mut DiscriminatorModel,
    opt: &mut Adam,
    fake: Tensor<f32>,
    real: Tensor<f32>,
    gamma: f64,
) -> super::losses::DiscriminatorLossTerms {
    let (terms, grads) = {
        let dp = d.bind::<f32>(true);
        let real = Var::leaf(real);
        let sr = d.graph(&dp, &real);
        let gx = grad(&sr.sum(), &[&real], true).remove(0);
        let (loss, terms) = discriminator_objective(&d.graph(&dp, &Var::constant(fake)), &sr, &gx, gamma);
        (terms, dp.grads(&loss))
    };
    if terms.total.is_finite() {
        opt.step_params(d.params_mut(), &grads);
    }
    terms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{train_feature_extractor, FeatureTrainingConfig};
    use crate::training::losses::domain_guided_encoder_loss;
    use crate::workspace::dataset::{make_synthetic_dataset, SyntheticSpec};

    fn data() -> Dataset {
        make_synthetic_dataset(&SyntheticSpec::new(8, 32), 3).unwrap()
    }

    fn gan(steps: usize) -> GanOutcome {
        let mut cfg = GanConfig::new(GeneratorConfig::toy(), steps);
        cfg.batch_size = 4;
        train_gan(&data(), &cfg).unwrap()
    }

    fn extractor() -> FeatureExtractor {
        let cfg = FeatureTrainingConfig { feature_maps: vec![4, 4], steps: 2, batch_size: 4, ..Default::default() };
        train_feature_extractor(&data(), &cfg).unwrap().extractor
    }

    fn small_cfg(steps: usize) -> TrainingConfig {
        TrainingConfig { steps, batch_size: 4, encoder_feature_maps: Some(vec![8, 8]), ..Default::default() }
    }

    #[test]
    fn gan_smoke_and_determinism() {
        let a = gan(2);
        let b = gan(2);
        assert!(a.generator.is_frozen());
        assert_eq!(a.generator.params(), b.generator.params());
        assert_eq!(a.discriminator, b.discriminator);
        assert_eq!(a.log.len(), 2);
        assert!(a.log[0].get("r1").is_some());
    }

    #[test]
    fn gan_rejects_mismatched_data() {
        let cfg = GanConfig::new(GeneratorConfig::small(), 1);
        assert!(train_gan(&data(), &cfg).is_err());
    }

    #[test]
    fn encoder_trainings_leave_generator_untouched() {
        let out = gan(1);
        let before = out.generator.params().clone();
        let f = extractor();
        let conv = train_conventional_encoder(&out.generator, &small_cfg(2)).unwrap();
        let dg = train_domain_guided_encoder(&out.generator, &out.discriminator, &f, &data(), &small_cfg(2)).unwrap();
        assert_eq!(out.generator.params(), &before);
        assert_eq!(conv.log.len(), 2);
        assert!(dg.discriminator.is_some());
        let again = train_conventional_encoder(&out.generator, &small_cfg(2)).unwrap();
        assert_eq!(conv.encoder, again.encoder);
    }

    #[test]
    fn unfrozen_generator_rejected() {
        let mut rng = SeededRng::new(0);
        let g = GeneratorModel::new(GeneratorConfig::toy(), &mut rng).unwrap();
        assert!(train_conventional_encoder(&g, &small_cfg(1)).is_err());
    }

    #[test]
    fn tiny_encoder_step_does_not_increase_objective() {
        let out = gan(1);
        let f = extractor();
        let cfg = small_cfg(1);
        let mut rng = SeededRng::new(4);
        let mut e = new_encoder(&out.generator, &cfg, &mut rng).unwrap();
        let d = data();
        let batch: Vec<&Image> = d.images[..4].iter().collect();
        let w = cfg.weights();
        let before = domain_guided_encoder_loss(&e, &out.generator, &out.discriminator, &f, &batch, w).unwrap();
        let mut opt = Adam::new(1e-5, 0.9, 0.99);
        encoder_step(&mut e, &mut opt, &out.generator, &out.discriminator, &f, &Image::batch(&batch), w);
        let after = domain_guided_encoder_loss(&e, &out.generator, &out.discriminator, &f, &batch, w).unwrap();
        assert!(after.total <= before.total, "{} -> {}", before.total, after.total);
    }

    #[test]
    fn log_lines_are_json() {
        let rec = StepRecord::new(3, &[("pixel", 0.5)]);
        let mut buf = Vec::new();
        write_jsonl(&[rec.clone(), rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: StepRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.get("pixel"), Some(0.5));
        assert_eq!(back.step, 3);
    }
}
