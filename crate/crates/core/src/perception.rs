//! Small attribute classifier whose mid-level activations serve as the
//! perceptual feature space `F`.
//!
//! The network is a downsampling tower, one more 3x3 convolution at 4x4 and a
//! linear head with one logit per attribute. Features are read at the tap,
//! the output of the last downsampling block.

use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Real, Tensor, Var};
use crate::error::{ensure_arg, Error, Result};
use crate::image::Image;
use crate::nn::{self, Adam, Bound, Init, Params};
use crate::rng::SeededRng;
use crate::synthesis::check_layout;
use crate::tower::{flatten, TowerConfig};
use crate::workspace::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub tower: TowerConfig,
    pub outputs: usize,
}

impl FeatureConfig {
    pub fn tap_name(&self) -> String {
        format!("feat.down{}", self.tower.levels().saturating_sub(1))
    }

    /// Flattened width at the tap.
    pub fn feature_dim(&self) -> usize {
        self.tower.flat_dim()
    }

    /// Width of the spatially pooled embedding used for distribution metrics.
    pub fn embedding_dim(&self) -> usize {
        *self.tower.feature_maps.last().unwrap_or(&0)
    }
}

/// Features at the tap, `[C', H', W']`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub shape: [usize; 3],
    pub values: Vec<f32>,
}

impl FeatureMap {
    /// Per-channel spatial mean.
    pub fn pooled(&self) -> Vec<f64> {
        let [c, h, w] = self.shape;
        let hw = h * w;
        (0..c).map(|k| self.values[k * hw..(k + 1) * hw].iter().map(|&v| v as f64).sum::<f64>() / hw as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    params: Params,
    frozen: bool,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, rng: &mut SeededRng) -> Result<Self> {
        config.tower.validate()?;
        ensure_arg!(config.outputs >= 1, "feature extractor needs at least one output");
        let fm = *config.tower.feature_maps.last().unwrap();
        let mut init = Init::new(rng);
        config.tower.init("feat", &mut init);
        init.conv("feat.final", fm, fm, 3);
        init.linear("feat.head", fm * 16, config.outputs, 0.0);
        Ok(FeatureExtractor { config, params: init.params, frozen: false })
    }

    pub(crate) fn from_parts(config: FeatureConfig, params: Params) -> Result<Self> {
        let fresh = FeatureExtractor::new(config.clone(), &mut SeededRng::new(0))?;
        check_layout(&fresh.params, &params)?;
        Ok(FeatureExtractor { config, params, frozen: true })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn bind<T: Real>(&self, trainable: bool) -> Bound<'_, T> {
        self.params.bind(trainable && !self.frozen)
    }

    /// `images [N, C, R, R] -> (tap [N, F, 4, 4], logits [N, outputs])`.
    pub fn graph<T: Real>(&self, p: &Bound<T>, images: &Var<T>) -> (Var<T>, Var<T>) {
        let tap = self.config.tower.forward(p, "feat", images).pop().unwrap();
        let h = nn::lrelu(&nn::conv2d(p, "feat.final", &tap));
        let logits = nn::linear(p, "feat.head", &flatten(&h), 1.0);
        (tap, logits)
    }

    /// Flattened tap features, `[N, feature_dim]`.
    pub fn features_graph<T: Real>(&self, p: &Bound<T>, images: &Var<T>) -> Var<T> {
        flatten(&self.graph(p, images).0)
    }

    fn check_image(&self, x: &Image) -> Result<()> {
        let t = &self.config.tower;
        ensure_arg!(
            x.shape() == [t.channels, t.resolution, t.resolution],
            "image shape {:?} does not match extractor input [{}, {}, {}]",
            x.shape(),
            t.channels,
            t.resolution,
            t.resolution
        );
        Ok(())
    }

    pub fn extract_batch(&self, images: &[&Image]) -> Result<Vec<FeatureMap>> {
        for x in images {
            self.check_image(x)?;
        }
        let mut out = Vec::with_capacity(images.len());
        let _ng = no_grad();
        let p = self.bind::<f32>(false);
        for chunk in images.chunks(64) {
            let (tap, _) = self.graph(&p, &Var::constant(Image::batch::<f32>(chunk)));
            let s = tap.shape().to_vec();
            let per = s[1] * s[2] * s[3];
            for values in tap.value().data().chunks(per) {
                out.push(FeatureMap { shape: [s[1], s[2], s[3]], values: values.to_vec() });
            }
        }
        Ok(out)
    }

    pub fn extract_features(&self, x: &Image) -> Result<FeatureMap> {
        Ok(self.extract_batch(&[x])?.remove(0))
    }

    /// Attribute probabilities, `[N][outputs]`.
    pub fn predict(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        for x in images {
            self.check_image(x)?;
        }
        let _ng = no_grad();
        let p = self.bind::<f32>(false);
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let (_, logits) = self.graph(&p, &Var::constant(Image::batch::<f32>(chunk)));
            for row in logits.value().data().chunks(self.config.outputs) {
                out.push(row.iter().map(|&v| 1.0 / (1.0 + (-v as f64).exp())).collect());
            }
        }
        Ok(out)
    }

    /// Pooled embeddings for distribution metrics, `[N][embedding_dim]`.
    pub fn embed(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        Ok(self.extract_batch(images)?.iter().map(FeatureMap::pooled).collect())
    }
}

/// L2 norm of the feature difference at the tap.
pub fn perceptual_distance(f: &FeatureExtractor, a: &Image, b: &Image) -> Result<f64> {
    ensure_arg!(a.shape() == b.shape(), "image shapes differ: {:?} vs {:?}", a.shape(), b.shape());
    let fm = f.extract_batch(&[a, b])?;
    Ok(fm[0]
        .values
        .iter()
        .zip(&fm[1].values)
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureTrainingConfig {
    pub feature_maps: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Fraction of the dataset held out for the accuracy report.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for FeatureTrainingConfig {
    fn default() -> Self {
        FeatureTrainingConfig {
            feature_maps: vec![32, 32, 32, 32],
            steps: 1500,
            batch_size: 32,
            learning_rate: 2e-3,
            holdout: 0.1,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureTrainingOutcome {
    pub extractor: FeatureExtractor,
    /// Mean per-attribute accuracy on the held-out split.
    pub heldout_accuracy: f64,
    pub per_attribute_accuracy: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Trains the attribute classifier with a binary cross-entropy loss and
/// freezes it. The last `holdout` fraction of the dataset is never trained on.
pub fn train_feature_extractor(data: &Dataset, cfg: &FeatureTrainingConfig) -> Result<FeatureTrainingOutcome> {
    ensure_arg!(!data.is_empty(), "dataset is empty");
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| crate::error::invalid("feature extractor training needs attribute labels"))?;
    ensure_arg!(cfg.batch_size >= 1, "batch size must be positive");
    ensure_arg!((0.0..1.0).contains(&cfg.holdout), "holdout must be in [0, 1)");
    let [c, r, _] = data.image_shape().unwrap();
    let outputs = labels[0].len();
    let config = FeatureConfig {
        tower: TowerConfig { resolution: r, channels: c, feature_maps: cfg.feature_maps.clone() },
        outputs,
    };
    let mut rng = SeededRng::new(cfg.seed);
    let mut model = FeatureExtractor::new(config, &mut rng)?;
    let n_hold = ((data.len() as f64) * cfg.holdout).round() as usize;
    let n_train = data.len() - n_hold;
    ensure_arg!(n_train >= 1, "no training images left after holdout");

    let mut opt = Adam::new(cfg.learning_rate, 0.9, 0.99);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(n_train)).collect();
        let imgs: Vec<&Image> = idx.iter().map(|&i| &data.images[i]).collect();
        let y: Vec<f32> = idx.iter().flat_map(|&i| labels[i].iter().map(|&b| b as u8 as f32)).collect();
        let grads = {
            let p = model.bind::<f32>(true);
            let (_, logits) = model.graph(&p, &Var::constant(Image::batch::<f32>(&imgs)));
            let y = Var::constant(Tensor::new(vec![cfg.batch_size, outputs], y));
            let loss = logits.softplus().sub(&logits.mul(&y)).mean();
            let l = loss.item() as f64;
            if !l.is_finite() {
                return Err(Error::TrainingFailure { step, reason: "non-finite classifier loss".into() });
            }
            losses.push(l);
            p.grads(&loss)
        };
        opt.step_params(&mut model.params, &grads);
    }
    model.freeze();

    let mut per_attribute_accuracy = vec![f64::NAN; outputs];
    let mut heldout_accuracy = f64::NAN;
    if n_hold > 0 {
        let hold: Vec<&Image> = data.images[n_train..].iter().collect();
        let probs = model.predict(&hold)?;
        let mut correct = vec![0usize; outputs];
        for (p, l) in probs.iter().zip(&labels[n_train..]) {
            for k in 0..outputs {
                correct[k] += ((p[k] >= 0.5) == l[k]) as usize;
            }
        }
        per_attribute_accuracy = correct.iter().map(|&c| c as f64 / n_hold as f64).collect();
        heldout_accuracy = per_attribute_accuracy.iter().sum::<f64>() / outputs as f64;
    }
    Ok(FeatureTrainingOutcome { extractor: model, heldout_accuracy, per_attribute_accuracy, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad;
    use crate::workspace::dataset::{make_synthetic_dataset, SyntheticSpec};

    fn tiny() -> FeatureExtractor {
        let cfg = FeatureConfig {
            tower: TowerConfig { resolution: 8, channels: 3, feature_maps: vec![4, 4] },
            outputs: 4,
        };
        FeatureExtractor::new(cfg, &mut SeededRng::new(5)).unwrap()
    }

    fn image(seed: u64) -> Image {
        let mut rng = SeededRng::new(seed);
        Image::from_clamped(3, 8, 8, (0..192).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn features_are_deterministic_and_distinct() {
        let f = tiny();
        let (a, b) = (image(1), image(2));
        assert_eq!(f.extract_features(&a).unwrap(), f.extract_features(&a).unwrap());
        assert_ne!(f.extract_features(&a).unwrap(), f.extract_features(&b).unwrap());
        assert_eq!(f.extract_features(&a).unwrap().shape, [4, 4, 4]);
    }

    #[test]
    fn wrong_resolution_rejected() {
        let f = tiny();
        let x = Image::filled(3, 16, 16, 0.0).unwrap();
        assert!(matches!(f.extract_features(&x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn distance_is_a_pseudometric() {
        let f = tiny();
        let (a, b, c) = (image(1), image(2), image(3));
        let d = |x: &Image, y: &Image| perceptual_distance(&f, x, y).unwrap();
        assert_eq!(d(&a, &a), 0.0);
        assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
        assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        let f = tiny();
        let x0: Tensor<f64> = Image::batch(&[&image(4)]);
        let p = f.bind::<f64>(false);
        let energy = |t: &Tensor<f64>| f.features_graph(&p, &Var::constant(t.clone())).square().sum().item();
        let x = Var::leaf(x0.clone());
        let g = grad(&f.features_graph(&p, &x).square().sum(), &[&x], false).remove(0);
        let mut rng = SeededRng::new(9);
        for _ in 0..20 {
            let i = rng.below(x0.numel());
            let h = 1e-5;
            let mut up = x0.clone();
            up.data_mut()[i] += h;
            let mut dn = x0.clone();
            dn.data_mut()[i] -= h;
            let fd = (energy(&up) - energy(&dn)) / (2.0 * h);
            let an = g.value().data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-3 || (fd - an).abs() < 1e-9, "coord {i}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn training_is_reproducible_and_freezes() {
        let data = make_synthetic_dataset(&SyntheticSpec::new(8, 40), 1).unwrap();
        let cfg = FeatureTrainingConfig { feature_maps: vec![4, 4], steps: 3, batch_size: 4, ..Default::default() };
        let a = train_feature_extractor(&data, &cfg).unwrap();
        let b = train_feature_extractor(&data, &cfg).unwrap();
        assert_eq!(a.extractor, b.extractor);
        assert!(a.extractor.is_frozen());
    }

    #[test]
    fn unlabeled_or_empty_dataset_rejected() {
        let mut data = make_synthetic_dataset(&SyntheticSpec::new(8, 4), 1).unwrap();
        data.labels = None;
        assert!(train_feature_extractor(&data, &FeatureTrainingConfig::default()).is_err());
        let empty = Dataset { images: vec![], labels: Some(vec![]), params: None, names: vec![] };
        assert!(train_feature_extractor(&empty, &FeatureTrainingConfig::default()).is_err());
    }
}
