//! Downsampling convolutional tower shared by the encoder, discriminator and
//! feature extractor.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Var};
use crate::error::{ensure_arg, Result};
use crate::nn::{self, Bound, Init};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerConfig {
    pub resolution: usize,
    pub channels: usize,
    /// Feature maps from full resolution down to 4x4; `log2(R) - 1` entries.
    pub feature_maps: Vec<usize>,
}

impl TowerConfig {
    pub fn levels(&self) -> usize {
        self.resolution.trailing_zeros() as usize - 2
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            [4, 8, 16, 32, 64].contains(&self.resolution),
            "resolution must be one of 4, 8, 16, 32, 64"
        );
        ensure_arg!(self.channels == 1 || self.channels == 3, "channels must be 1 or 3");
        ensure_arg!(
            self.feature_maps.len() == self.levels() + 1,
            "need {} feature-map entries, got {}",
            self.levels() + 1,
            self.feature_maps.len()
        );
        Ok(())
    }

    /// Width of the flattened 4x4 output.
    pub fn flat_dim(&self) -> usize {
        self.feature_maps.last().copied().unwrap_or(0) * 16
    }

    pub(crate) fn init(&self, prefix: &str, init: &mut Init) {
        let fm = &self.feature_maps;
        init.conv(&format!("{prefix}.fromrgb"), self.channels, fm[0], 1);
        for i in 0..self.levels() {
            init.conv(&format!("{prefix}.down{i}"), fm[i], fm[i + 1], 3);
        }
    }

    /// Runs the tower on `x [N, C, R, R]`, returning the output of every
    /// downsampling block (the last one is `[N, F, 4, 4]`).
    pub(crate) fn forward<T: Real>(&self, p: &Bound<T>, prefix: &str, x: &Var<T>) -> Vec<Var<T>> {
        let mut h = nn::lrelu(&nn::conv2d(p, &format!("{prefix}.fromrgb"), x));
        let mut outs = Vec::with_capacity(self.levels());
        for i in 0..self.levels() {
            h = nn::lrelu(&nn::conv2d(p, &format!("{prefix}.down{i}"), &h)).avg_pool2();
            outs.push(h.clone());
        }
        if outs.is_empty() {
            outs.push(h);
        }
        outs
    }
}

pub(crate) fn flatten<T: Real>(x: &Var<T>) -> Var<T> {
    let n = x.shape()[0];
    let rest = x.value().numel() / n;
    x.reshape(&[n, rest])
}
