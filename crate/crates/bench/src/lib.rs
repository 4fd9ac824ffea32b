//! Untrained fixtures shared by the benchmarks. Timings do not depend on
//! weights, so nothing here is trained.

use idinv::inversion::Models;
use idinv::perception::FeatureConfig;
use idinv::tower::TowerConfig;
use idinv::training::{EncoderConfig, EncoderModel};
use idinv::{FeatureExtractor, GeneratorConfig, GeneratorModel, Image, SeededRng};

pub struct Fixture {
    pub g: GeneratorModel,
    pub e: EncoderModel,
    pub f: FeatureExtractor,
    pub targets: Vec<Image>,
}

impl Fixture {
    pub fn new(config: GeneratorConfig, targets: usize) -> Self {
        let mut rng = SeededRng::new(5);
        let mut g = GeneratorModel::new(config, &mut rng).expect("generator config");
        g.freeze();
        let res = g.config().resolution;
        let levels = res.trailing_zeros() as usize - 2;
        let width = g.config().feature_maps[0];
        let tower = TowerConfig { resolution: res, channels: g.config().channels, feature_maps: vec![width; levels + 1] };
        let mean = g.mean_w(&mut rng, 64).expect("mean code");
        let e = EncoderModel::new(EncoderConfig::for_generator(&g, vec![width; levels + 1]), &mean, &mut rng)
            .expect("encoder config");
        let mut f = FeatureExtractor::new(FeatureConfig { tower, outputs: 4 }, &mut rng).expect("feature config");
        f.freeze();
        let (_, targets) = g.sample(&mut rng, targets).expect("samples");
        Fixture { g, e, f, targets }
    }

    pub fn models(&self) -> Models<'_> {
        Models::new(&self.g, &self.e, &self.f)
    }
}
