#![allow(dead_code)]

use std::path::Path;

use idinv::evaluation::SemanticBoundary;
use idinv::perception::FeatureConfig;
use idinv::tower::TowerConfig;
use idinv::training::{EncoderConfig, EncoderModel};
use idinv::workspace::{save_checkpoint, Checkpoint};
use idinv::{FeatureExtractor, GeneratorConfig, GeneratorModel, Image, SeededRng};
use idinv_cli::jobs::Loaded;

/// Untrained 8x8 models; enough to exercise every code path quickly.
pub fn toy_checkpoint() -> Checkpoint {
    let mut rng = SeededRng::new(21);
    let mut g = GeneratorModel::new(GeneratorConfig::toy(), &mut rng).unwrap();
    g.freeze();
    let mean = g.mean_w(&mut rng, 32).unwrap();
    let e = EncoderModel::new(EncoderConfig::for_generator(&g, vec![8, 8]), &mean, &mut rng).unwrap();
    let tower = TowerConfig { resolution: 8, channels: 3, feature_maps: vec![8, 8] };
    let mut f = FeatureExtractor::new(FeatureConfig { tower, outputs: 4 }, &mut rng).unwrap();
    f.freeze();
    let normal: Vec<f64> = (0..8).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let boundaries = ["size", "shade", "x_position", "aspect"]
        .iter()
        .map(|a| SemanticBoundary { attribute: a.to_string(), normal: normal.clone(), bias: 0.0 })
        .collect();
    Checkpoint { generator: Some(g), encoder: Some(e), features: Some(f), discriminator: None, boundaries }
}

pub fn toy_loaded() -> Loaded {
    Loaded::from_checkpoint("toy".into(), toy_checkpoint()).unwrap()
}

pub fn write_toy_checkpoint(path: &Path) {
    save_checkpoint(&toy_checkpoint(), path).unwrap();
}

/// Generator samples, usable as inputs of the right shape.
pub fn toy_images(n: usize, seed: u64) -> Vec<Image> {
    let ck = toy_checkpoint();
    ck.generator.unwrap().sample(&mut SeededRng::new(seed), n).unwrap().1
}
