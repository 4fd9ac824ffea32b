use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Real, Tensor, Var};
use crate::error::{ensure_arg, Result};
use crate::image::Image;
use crate::latent::{LatentCode, Space};
use crate::nn::{self, Bound, Init, Params};
use crate::rng::SeededRng;
use crate::synthesis::{check_layout, GeneratorModel};
use crate::tower::{flatten, TowerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub tower: TowerConfig,
    pub num_layers: usize,
    pub latent_dim: usize,
}

impl EncoderConfig {
    /// Tower sized to the generator's output.
    pub fn for_generator(g: &GeneratorModel, feature_maps: Vec<usize>) -> Self {
        let [c, r, _] = g.image_shape();
        EncoderConfig {
            tower: TowerConfig { resolution: r, channels: c, feature_maps },
            num_layers: g.num_layers(),
            latent_dim: g.latent_dim(),
        }
    }
}

/// `E: image -> [L, d]` W-space code.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: Params,
}

impl EncoderModel {
    /// Initializes the output bias at `init_code` (typically the generator's
    /// mean W) so training starts from an in-range code.
    pub fn new(config: EncoderConfig, init_code: &LatentCode, rng: &mut SeededRng) -> Result<Self> {
        config.tower.validate()?;
        ensure_arg!(
            init_code.layers() == config.num_layers && init_code.width() == config.latent_dim,
            "initial code does not match encoder output shape"
        );
        let mut init = Init::new(rng);
        config.tower.init("enc", &mut init);
        let out = config.num_layers * config.latent_dim;
        init.normal("enc.head.weight", vec![out, config.tower.flat_dim()]);
        // small head so the initial output sits near the bias
        for v in init.params.tensors_mut().last_mut().unwrap().data_mut() {
            *v *= 0.1;
        }
        init.params.insert("enc.head.bias", Tensor::new(vec![out], init_code.values().to_vec()));
        Ok(EncoderModel { config, params: init.params })
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: Params) -> Result<Self> {
        config.tower.validate()?;
        let zero = LatentCode::new(Space::W, config.num_layers, config.latent_dim, vec![0.0; config.num_layers * config.latent_dim])?;
        let fresh = EncoderModel::new(config.clone(), &zero, &mut SeededRng::new(0))?;
        check_layout(&fresh.params, &params)?;
        Ok(EncoderModel { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn bind<T: Real>(&self, trainable: bool) -> Bound<'_, T> {
        self.params.bind(trainable)
    }

    /// `images [N, C, R, R] -> codes [N, L, d]`.
    pub fn graph<T: Real>(&self, p: &Bound<T>, images: &Var<T>) -> Var<T> {
        let feats = self.config.tower.forward(p, "enc", images);
        let h = flatten(feats.last().unwrap());
        let n = h.shape()[0];
        nn::linear(p, "enc.head", &h, 1.0).reshape(&[n, self.config.num_layers, self.config.latent_dim])
    }

    pub fn encode_batch(&self, images: &[&Image]) -> Result<Vec<LatentCode>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let t = &self.config.tower;
        for im in images {
            ensure_arg!(
                im.shape() == [t.channels, t.resolution, t.resolution],
                "image shape {:?} does not match encoder input",
                im.shape()
            );
        }
        let _ng = no_grad();
        let p = self.bind::<f32>(false);
        let out = self.graph(&p, &Var::constant(Image::batch::<f32>(images)));
        LatentCode::unbatch(out.value(), Space::W)
    }

    pub fn encode(&self, image: &Image) -> Result<LatentCode> {
        Ok(self.encode_batch(&[image])?.remove(0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub tower: TowerConfig,
    pub hidden: usize,
}

/// `D: image -> scalar realness score`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    config: DiscriminatorConfig,
    params: Params,
}

impl DiscriminatorModel {
    pub fn new(config: DiscriminatorConfig, rng: &mut SeededRng) -> Result<Self> {
        config.tower.validate()?;
        ensure_arg!(config.hidden > 0, "hidden width must be positive");
        let mut init = Init::new(rng);
        config.tower.init("disc", &mut init);
        init.linear("disc.fc", config.tower.flat_dim(), config.hidden, 0.0);
        init.linear("disc.out", config.hidden, 1, 0.0);
        Ok(DiscriminatorModel { config, params: init.params })
    }

    pub(crate) fn from_parts(config: DiscriminatorConfig, params: Params) -> Result<Self> {
        let fresh = DiscriminatorModel::new(config.clone(), &mut SeededRng::new(0))?;
        check_layout(&fresh.params, &params)?;
        Ok(DiscriminatorModel { config, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn bind<T: Real>(&self, trainable: bool) -> Bound<'_, T> {
        self.params.bind(trainable)
    }

    /// `images [N, C, R, R] -> scores [N, 1]`.
    pub fn graph<T: Real>(&self, p: &Bound<T>, images: &Var<T>) -> Var<T> {
        let feats = self.config.tower.forward(p, "disc", images);
        let h = nn::lrelu(&nn::linear(p, "disc.fc", &flatten(feats.last().unwrap()), 1.0));
        nn::linear(p, "disc.out", &h, 1.0)
    }

    pub fn score(&self, images: &[&Image]) -> Result<Vec<f64>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let _ng = no_grad();
        let p = self.bind::<f32>(false);
        let out = self.graph(&p, &Var::constant(Image::batch::<f32>(images)));
        Ok(out.value().data().iter().map(|&v| v as f64).collect())
    }
}
