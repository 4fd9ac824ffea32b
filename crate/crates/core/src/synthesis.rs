//! The style-based generator: a Z -> W mapping network and a synthesis
//! network driven by one style row per modulated layer.
//!
//! Layout for resolution `R` with `B = log2(R) - 1` blocks: block 0 starts
//! from a learned 4x4 constant, later blocks upsample 2x. Each block has two
//! modulated 3x3 convolutions reading rows `2b` and `2b + 1` of the code, and
//! a 1x1 to-RGB layer reading row `2b + 1`. RGB outputs accumulate through
//! upsampled skips and pass through `tanh`. No noise is injected.

use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Real, Tensor, Var};
use crate::error::{ensure_arg, Error, Result};
use crate::image::Image;
use crate::latent::{LatentCode, Space};
use crate::nn::{self, Bound, Init, Params};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapperConfig {
    pub depth: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Learning-rate multiplier of the mapping layers.
    pub lr_mul: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub latent_dim: usize,
    pub channels: usize,
    /// Feature maps per block, from 4x4 upward; one entry per block.
    pub feature_maps: Vec<usize>,
    pub mapper: MapperConfig,
}

impl GeneratorConfig {
    /// Desk default: 32x32 RGB, d = 64, 8 layers, mapper depth 4.
    pub fn desk() -> Self {
        GeneratorConfig {
            resolution: 32,
            latent_dim: 64,
            channels: 3,
            feature_maps: vec![64, 64, 64, 32],
            mapper: MapperConfig { depth: 4, width: 64, latent_dim: 64, lr_mul: 0.01 },
        }
    }

    /// 16x16 profile used for the quick pipelines and tests.
    pub fn small() -> Self {
        GeneratorConfig {
            resolution: 16,
            latent_dim: 32,
            channels: 3,
            feature_maps: vec![32, 32, 32],
            mapper: MapperConfig { depth: 4, width: 32, latent_dim: 32, lr_mul: 0.01 },
        }
    }

    /// 8x8 toy profile used for gradient checks.
    pub fn toy() -> Self {
        GeneratorConfig {
            resolution: 8,
            latent_dim: 8,
            channels: 3,
            feature_maps: vec![8, 8],
            mapper: MapperConfig { depth: 2, width: 8, latent_dim: 8, lr_mul: 0.01 },
        }
    }

    pub fn blocks(&self) -> usize {
        self.resolution.trailing_zeros() as usize - 1
    }

    /// Number of style rows: two per resolution block.
    pub fn num_layers(&self) -> usize {
        2 * self.resolution.trailing_zeros() as usize - 2
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            [8, 16, 32, 64].contains(&self.resolution),
            "resolution must be one of 8, 16, 32, 64 (got {})",
            self.resolution
        );
        ensure_arg!(self.channels == 1 || self.channels == 3, "channels must be 1 or 3");
        ensure_arg!(
            self.feature_maps.len() == self.blocks(),
            "need {} feature-map entries, got {}",
            self.blocks(),
            self.feature_maps.len()
        );
        ensure_arg!(self.feature_maps.iter().all(|&f| f > 0), "feature maps must be positive");
        ensure_arg!(self.mapper.depth >= 1, "mapper depth must be at least 1");
        ensure_arg!(
            self.mapper.width >= self.latent_dim,
            "mapper width {} must be >= latent width {}",
            self.mapper.width,
            self.latent_dim
        );
        ensure_arg!(self.mapper.latent_dim == self.latent_dim, "mapper latent width mismatch");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    params: Params,
    frozen: bool,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(rng);
        let m = &config.mapper;
        for i in 0..m.depth {
            let inputs = if i == 0 { config.latent_dim } else { m.width };
            let outputs = if i + 1 == m.depth { config.latent_dim } else { m.width };
            // weights are divided by lr_mul so the effective init stays N(0, 1/fan_in)
            init.normal(format!("mapping.{i}.weight"), vec![outputs, inputs]);
            let w = init.params.tensors_mut().last_mut().unwrap();
            w.data_mut().iter_mut().for_each(|v| *v /= m.lr_mul as f32);
            init.constant(format!("mapping.{i}.bias"), vec![outputs], 0.0);
        }
        let d = config.latent_dim;
        let fm = &config.feature_maps;
        init.normal("synthesis.const", vec![1, fm[0], 4, 4]);
        for b in 0..config.blocks() {
            let cin = if b == 0 { fm[0] } else { fm[b - 1] };
            let cout = fm[b];
            for (j, ci) in [(0, cin), (1, cout)] {
                let name = format!("synthesis.b{b}.conv{j}");
                init.linear(&format!("{name}.affine"), d, ci, 1.0);
                init.conv(&name, ci, cout, 3);
            }
            let name = format!("synthesis.b{b}.torgb");
            init.linear(&format!("{name}.affine"), d, cout, 1.0);
            init.conv(&name, cout, config.channels, 1);
        }
        Ok(GeneratorModel { config, params: init.params, frozen: false })
    }

    pub(crate) fn from_parts(config: GeneratorConfig, params: Params, frozen: bool) -> Result<Self> {
        config.validate()?;
        let fresh = GeneratorModel::new(config.clone(), &mut SeededRng::new(0))?;
        check_layout(&fresh.params, &params)?;
        Ok(GeneratorModel { config, params, frozen })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    /// Mutable parameters; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut Params> {
        if self.frozen {
            return Err(Error::InvalidArgument("generator is frozen".into()));
        }
        Ok(&mut self.params)
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.config.channels, self.config.resolution, self.config.resolution]
    }

    /// Binds parameters for a graph; frozen models never track gradients.
    pub fn bind<T: Real>(&self, trainable: bool) -> Bound<'_, T> {
        self.params.bind(trainable && !self.frozen)
    }

    /// Mapping network: `z [N, d] -> w [N, d]`.
    pub fn mapping_graph<T: Real>(&self, p: &Bound<T>, z: &Var<T>) -> Var<T> {
        let m = &self.config.mapper;
        // normalize each z to unit second moment
        let ms = z.square().sum_to(&[z.shape()[0], 1]).scale(T::lit(1.0 / self.config.latent_dim as f64));
        let mut h = z.mul(&ms.shift(T::lit(1e-8)).powf(T::lit(-0.5)));
        for i in 0..m.depth {
            h = nn::lrelu(&nn::linear(p, &format!("mapping.{i}"), &h, m.lr_mul));
        }
        h
    }

    /// Synthesis network: `codes [N, L, d] -> images [N, C, R, R]`.
    pub fn synthesis_graph<T: Real>(&self, p: &Bound<T>, codes: &Var<T>) -> Var<T> {
        let cfg = &self.config;
        let n = codes.shape()[0];
        let d = cfg.latent_dim;
        let row = |l: usize| codes.narrow(1, l, 1).reshape(&[n, d]);
        let konst = p.get("synthesis.const");
        let mut x = konst.broadcast_to(&[n, konst.shape()[1], 4, 4]);
        let mut rgb: Option<Var<T>> = None;
        for b in 0..cfg.blocks() {
            if b > 0 {
                x = x.upsample2();
            }
            for j in 0..2 {
                let name = format!("synthesis.b{b}.conv{j}");
                let style = nn::linear(p, &format!("{name}.affine"), &row(2 * b + j), 1.0);
                x = nn::modulated_conv2d(p, &name, &x, &style, true);
                x = nn::lrelu(&nn::add_bias(p, &name, &x));
            }
            let name = format!("synthesis.b{b}.torgb");
            let style = nn::linear(p, &format!("{name}.affine"), &row(2 * b + 1), 1.0);
            let y = nn::add_bias(p, &name, &nn::modulated_conv2d(p, &name, &x, &style, false));
            rgb = Some(match rgb {
                None => y,
                Some(prev) => prev.upsample2().add(&y),
            });
        }
        rgb.expect("at least one block").tanh()
    }

    fn check_code(&self, code: &LatentCode) -> Result<()> {
        ensure_arg!(code.space() == Space::W, "generator consumes W codes");
        ensure_arg!(
            code.layers() == self.num_layers() && code.width() == self.latent_dim(),
            "code is [{}, {}], generator expects [{}, {}]",
            code.layers(),
            code.width(),
            self.num_layers(),
            self.latent_dim()
        );
        Ok(())
    }

    /// Maps Z codes to single-row W codes.
    pub fn map_z_to_w(&self, zs: &[LatentCode]) -> Result<Vec<LatentCode>> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        for z in zs {
            ensure_arg!(z.space() == Space::Z, "mapping consumes Z codes");
            ensure_arg!(z.width() == self.latent_dim(), "z width {} != {}", z.width(), self.latent_dim());
        }
        let _ng = no_grad();
        let p = self.bind::<f32>(false);
        let refs: Vec<&LatentCode> = zs.iter().collect();
        let t = LatentCode::batch::<f32>(&refs);
        let t = t.reshaped(vec![zs.len(), self.latent_dim()]);
        let w = self.mapping_graph(&p, &Var::constant(t));
        LatentCode::unbatch(w.value(), Space::W)
    }

    /// Renders W codes of shape `[L, d]` into images.
    pub fn generate_batch(&self, codes: &[&LatentCode]) -> Result<Vec<Image>> {
        if codes.is_empty() {
            return Ok(Vec::new());
        }
        for c in codes {
            self.check_code(c)?;
        }
        let _ng = no_grad();
        let p = self.bind::<f32>(false);
        let out = self.synthesis_graph(&p, &Var::constant(LatentCode::batch::<f32>(codes)));
        Image::unbatch(out.value())
    }

    pub fn generate(&self, code: &LatentCode) -> Result<Image> {
        Ok(self.generate_batch(&[code])?.remove(0))
    }

    /// Canonical sampling path: `z -> w -> broadcast -> image`.
    pub fn sample(&self, rng: &mut SeededRng, n: usize) -> Result<(Vec<LatentCode>, Vec<Image>)> {
        let zs = crate::latent::sample_latent(rng, n, self.latent_dim())?;
        let codes = self
            .map_z_to_w(&zs)?
            .into_iter()
            .map(|w| w.broadcast(self.num_layers()))
            .collect::<Result<Vec<_>>>()?;
        let mut images = Vec::with_capacity(n);
        for chunk in codes.chunks(32) {
            let refs: Vec<&LatentCode> = chunk.iter().collect();
            images.extend(self.generate_batch(&refs)?);
        }
        Ok((codes, images))
    }

    /// Mean W over `n` mapped samples, broadcast to `[L, d]`.
    pub fn mean_w(&self, rng: &mut SeededRng, n: usize) -> Result<LatentCode> {
        let zs = crate::latent::sample_latent(rng, n, self.latent_dim())?;
        let ws = self.map_z_to_w(&zs)?;
        let d = self.latent_dim();
        let mut acc = vec![0.0f64; d];
        for w in &ws {
            for (a, &v) in acc.iter_mut().zip(w.values()) {
                *a += v as f64;
            }
        }
        let mean = acc.iter().map(|a| (a / n as f64) as f32).collect();
        LatentCode::new(Space::W, 1, d, mean)?.broadcast(self.num_layers())
    }
}

/// Errors unless `got` has exactly the names and shapes of `expected`.
pub(crate) fn check_layout(expected: &Params, got: &Params) -> Result<()> {
    let mismatch = expected.len() != got.len()
        || expected
            .iter()
            .zip(got.iter())
            .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape());
    if mismatch {
        return Err(Error::Corruption("parameter layout does not match model config".into()));
    }
    if !got.all_finite() {
        return Err(Error::Corruption("non-finite parameter values".into()));
    }
    Ok(())
}

/// Codes as a differentiable `[N, L, d]` input.
pub fn codes_tensor<T: Real>(codes: &[&LatentCode]) -> Tensor<T> {
    LatentCode::batch(codes)
}
