//! Named parameter storage, layer building blocks and the Adam optimizer.
//!
//! Parameters are stored in `f32` and bound into a graph of any [`Real`]
//! precision per forward pass. Weights use run-time scaling by
//! `1/sqrt(fan_in)` so that Adam sees unit-scale parameters everywhere.

use std::collections::HashMap;

use crate::autodiff::{grad, ConvGeom, Real, Tensor, Var};
use crate::rng::SeededRng;

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> &Tensor<f32> {
        &self.tensors[self.slot(name)]
    }

    fn slot(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    /// Materializes every parameter as a graph variable. Gradients are
    /// tracked only when `trainable`.
    pub fn bind<T: Real>(&self, trainable: bool) -> Bound<'_, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let v = t.cast::<T>();
                if trainable {
                    Var::leaf(v)
                } else {
                    Var::constant(v)
                }
            })
            .collect();
        Bound { params: self, vars }
    }
}

/// Parameters materialized in one graph.
pub struct Bound<'a, T: Real> {
    params: &'a Params,
    vars: Vec<Var<T>>,
}

impl<'a, T: Real> Bound<'a, T> {
    pub fn get(&self, name: &str) -> &Var<T> {
        &self.vars[self.params.slot(name)]
    }

    /// Gradients of `loss` for every parameter, in storage order.
    pub fn grads(&self, loss: &Var<T>) -> Vec<Tensor<f32>> {
        let refs: Vec<&Var<T>> = self.vars.iter().collect();
        grad(loss, &refs, false)
            .into_iter()
            .map(|g| g.value().cast::<f32>())
            .collect()
    }
}

/// Builds parameters with standard-normal weights and constant biases.
pub struct Init<'r> {
    pub params: Params,
    rng: &'r mut SeededRng,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut SeededRng) -> Self {
        Init { params: Params::new(), rng }
    }

    pub fn normal(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        let n = shape.iter().product();
        let t = Tensor::new(shape, self.rng.normals(n));
        self.params.insert(name, t);
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f32) {
        self.params.insert(name, Tensor::full(shape, value));
    }

    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize, bias: f32) {
        self.normal(format!("{name}.weight"), vec![outputs, inputs]);
        self.constant(format!("{name}.bias"), vec![outputs], bias);
    }

    pub fn conv(&mut self, name: &str, inputs: usize, outputs: usize, kernel: usize) {
        self.normal(format!("{name}.weight"), vec![outputs, inputs, kernel, kernel]);
        self.constant(format!("{name}.bias"), vec![outputs], 0.0);
    }
}

fn gain<T: Real>(fan_in: usize) -> T {
    T::lit(1.0 / (fan_in as f64).sqrt())
}

pub fn lrelu<T: Real>(x: &Var<T>) -> Var<T> {
    // sqrt(2) keeps activations at unit variance through the nonlinearity
    x.leaky_relu(T::lit(LRELU_SLOPE)).scale(T::lit(std::f64::consts::SQRT_2))
}

/// `x [N, in] -> [N, out]`; `lr_mul` scales both the effective weight and bias.
pub fn linear<T: Real>(p: &Bound<T>, name: &str, x: &Var<T>, lr_mul: f64) -> Var<T> {
    let w = p.get(&format!("{name}.weight"));
    let b = p.get(&format!("{name}.bias"));
    let fan_in = w.shape()[1];
    let w = w.scale(gain::<T>(fan_in) * T::lit(lr_mul));
    let y = x.matmul_t(&w, false, true);
    y.add(&b.scale(T::lit(lr_mul)).reshape(&[1, b.shape()[0]]))
}

/// Same-padded stride-1 convolution of `x [N, C, H, W]`.
pub fn conv2d<T: Real>(p: &Bound<T>, name: &str, x: &Var<T>) -> Var<T> {
    let w = p.get(&format!("{name}.weight"));
    let b = p.get(&format!("{name}.bias"));
    let (o, c, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let s = x.shape();
    let (n, h, wd) = (s[0], s[2], s[3]);
    assert_eq!(s[1], c, "{name}: expected {c} input channels, got {}", s[1]);
    let wm = w.reshape(&[o, c * k * k]).scale(gain::<T>(c * k * k));
    let y = if k == 1 {
        wm.matmul(&x.reshape(&[n, c, h * wd]))
    } else {
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: k, pad: k / 2 };
        wm.matmul(&x.im2col(geom))
    };
    y.reshape(&[n, o, h, wd]).add(&b.reshape(&[1, o, 1, 1]))
}

/// Style-modulated convolution with optional weight demodulation.
///
/// Modulation scales input channels by `style [N, C]`; demodulation rescales
/// each output channel so the expected output variance is one.
pub fn modulated_conv2d<T: Real>(
    p: &Bound<T>,
    name: &str,
    x: &Var<T>,
    style: &Var<T>,
    demodulate: bool,
) -> Var<T> {
    let w = p.get(&format!("{name}.weight"));
    let (o, c, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let s = x.shape();
    let (n, h, wd) = (s[0], s[2], s[3]);
    assert_eq!(s[1], c, "{name}: expected {c} input channels, got {}", s[1]);
    let w = w.scale(gain::<T>(c * k * k));
    let xs = x.mul(&style.reshape(&[n, c, 1, 1]));
    let wm = w.reshape(&[o, c * k * k]);
    let mut y = if k == 1 {
        wm.matmul(&xs.reshape(&[n, c, h * wd]))
    } else {
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: k, pad: k / 2 };
        wm.matmul(&xs.im2col(geom))
    };
    if demodulate {
        // sum_{c,kk} (w[o,c,kk] * s[n,c])^2 = (s^2) . (sum_kk w^2)^T
        let w2 = w.square().sum_to(&[o, c, 1, 1]).reshape(&[o, c]);
        let energy = style.square().matmul_t(&w2, false, true);
        let dcoef = energy.shift(T::lit(1e-8)).powf(T::lit(-0.5));
        y = y.mul(&dcoef.reshape(&[n, o, 1]));
    }
    y.reshape(&[n, o, h, wd])
}

pub fn add_bias<T: Real>(p: &Bound<T>, name: &str, x: &Var<T>) -> Var<T> {
    let b = p.get(&format!("{name}.bias"));
    x.add(&b.reshape(&[1, b.shape()[0], 1, 1]))
}

/// Adam with bias correction, over flat `f32` buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam { lr, beta1, beta2, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update to each buffer in `params` from the matching gradient.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = &'p mut [f32]>, grads: &[&[f32]]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i];
            if self.m.len() <= i {
                self.m.push(vec![0.0; g.len()]);
                self.v.push(vec![0.0; g.len()]);
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            assert_eq!(p.len(), g.len(), "adam buffer {i} size mismatch");
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    pub fn step_params(&mut self, params: &mut Params, grads: &[Tensor<f32>]) {
        let g: Vec<&[f32]> = grads.iter().map(|t| t.data()).collect();
        self.step(params.tensors_mut().iter_mut().map(|t| t.data_mut()), &g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0f32, -2.0];
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
            opt.step([x.as_mut_slice()], &[&g]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = SeededRng::new(0);
        let mut init = Init::new(&mut rng);
        init.conv("c", 2, 3, 3);
        let params = init.params;
        let x = Tensor::new(vec![1, 2, 3, 3], (0..18).map(|v| v as f64 / 10.0).collect());
        let b = params.bind::<f64>(false);
        let y = conv2d(&b, "c", &Var::constant(x.clone()));
        let w = params.get("c.weight");
        let g = 1.0 / (18.0f64).sqrt();
        // output channel 1 at (1, 1): full 3x3 window, no padding involved
        let mut expect = 0.0;
        for c in 0..2 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w.data()[((2 + c) * 3 + ky) * 3 + kx] as f64 * g;
                    expect += wv * x.data()[(c * 3 + ky) * 3 + kx];
                }
            }
        }
        let got = y.value().data()[9 + 4];
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn demodulated_output_channels_are_normalized() {
        let mut rng = SeededRng::new(1);
        let mut init = Init::new(&mut rng);
        init.normal("m.weight", vec![4, 3, 1, 1]);
        let params = init.params;
        let b = params.bind::<f64>(false);
        // A unit impulse in each channel: demodulated 1x1 conv maps the
        // all-ones input with unit style to a vector of unit-norm rows.
        let x = Var::constant(Tensor::full(vec![1, 3, 1, 1], 1.0));
        let s = Var::constant(Tensor::full(vec![1, 3], 2.0));
        let y = modulated_conv2d(&b, "m", &x, &s, true);
        let w = params.get("m.weight");
        for o in 0..4 {
            let row: Vec<f64> = (0..3).map(|c| w.data()[o * 3 + c] as f64).collect();
            let expect = row.iter().sum::<f64>() / row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((y.value().data()[o] - expect).abs() < 1e-6);
        }
    }
}
