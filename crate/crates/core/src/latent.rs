use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{ensure_arg, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Z,
    W,
}

/// Layer-wise latent code of shape `[L, d]`. Z-space codes have one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    layers: usize,
    width: usize,
    space: Space,
    values: Vec<f32>,
}

impl LatentCode {
    pub fn new(space: Space, layers: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        ensure_arg!(layers >= 1 && width >= 1, "latent code must be at least 1x1");
        ensure_arg!(space == Space::W || layers == 1, "Z-space codes have exactly one row");
        ensure_arg!(
            values.len() == layers * width,
            "latent code has {} values, expected {}",
            values.len(),
            layers * width
        );
        ensure_arg!(values.iter().all(|v| v.is_finite()), "latent code has non-finite values");
        Ok(LatentCode { layers, width, space, values })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, l: usize) -> &[f32] {
        &self.values[l * self.width..(l + 1) * self.width]
    }

    /// Repeats a single-row W code `layers` times.
    pub fn broadcast(&self, layers: usize) -> Result<LatentCode> {
        ensure_arg!(self.layers == 1, "broadcast needs a single-row code, got {} rows", self.layers);
        ensure_arg!(layers >= 1, "layer count must be positive");
        ensure_arg!(self.space == Space::W, "only W codes are broadcast");
        let mut values = Vec::with_capacity(layers * self.width);
        for _ in 0..layers {
            values.extend_from_slice(&self.values);
        }
        LatentCode::new(Space::W, layers, self.width, values)
    }

    /// Average of the rows, the `[d]` vector used for boundary probing.
    pub fn row_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.width];
        for l in 0..self.layers {
            for (o, &v) in out.iter_mut().zip(self.row(l)) {
                *o += v as f64;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.layers as f64);
        out
    }

    /// Stacks codes into a `[N, L, d]` tensor.
    pub fn batch<T: Real>(codes: &[&LatentCode]) -> Tensor<T> {
        assert!(!codes.is_empty(), "empty code batch");
        let (l, d) = (codes[0].layers, codes[0].width);
        let mut data = Vec::with_capacity(codes.len() * l * d);
        for c in codes {
            assert_eq!((c.layers, c.width), (l, d), "mixed code shapes in batch");
            data.extend(c.values.iter().map(|&v| T::from(v).unwrap()));
        }
        Tensor::new(vec![codes.len(), l, d], data)
    }

    /// Splits a `[N, L, d]` (or `[N, d]`) tensor into codes.
    pub fn unbatch<T: Real>(t: &Tensor<T>, space: Space) -> Result<Vec<LatentCode>> {
        let s = t.shape();
        let (l, d) = match s.len() {
            2 => (1, s[1]),
            3 => (s[1], s[2]),
            _ => return Err(crate::error::invalid(format!("cannot unbatch codes of shape {s:?}"))),
        };
        t.data()
            .chunks(l * d)
            .map(|c| LatentCode::new(space, l, d, c.iter().map(|v| v.to_f32().unwrap()).collect()))
            .collect()
    }
}

/// Draws `n` Z-space codes of width `d` with i.i.d. standard normal entries.
pub fn sample_latent(rng: &mut SeededRng, n: usize, d: usize) -> Result<Vec<LatentCode>> {
    ensure_arg!(d >= 1, "latent width must be positive");
    (0..n)
        .map(|_| LatentCode::new(Space::Z, 1, d, rng.normals(d)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_latent(&mut SeededRng::new(7), 2, 8).unwrap();
        let b = sample_latent(&mut SeededRng::new(7), 2, 8).unwrap();
        assert_eq!(a, b);
        assert!(sample_latent(&mut SeededRng::new(7), 0, 8).unwrap().is_empty());
        assert!(sample_latent(&mut SeededRng::new(7), 1, 0).is_err());
    }

    #[test]
    fn sampled_moments_are_standard_normal() {
        let codes = sample_latent(&mut SeededRng::new(1), 10_000, 16).unwrap();
        for j in 0..16 {
            let xs: Vec<f64> = codes.iter().map(|c| c.values()[j] as f64).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((-0.05..=0.05).contains(&mean), "dim {j} mean {mean}");
            assert!((0.95..=1.05).contains(&var.sqrt()), "dim {j} std {}", var.sqrt());
        }
    }

    #[test]
    fn broadcast_repeats_rows() {
        let w = LatentCode::new(Space::W, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(w.broadcast(1).unwrap(), w);
        let b = w.broadcast(8).unwrap();
        assert_eq!(b.layers(), 8);
        for l in 0..8 {
            assert_eq!(b.row(l), w.values());
        }
        assert!(w.broadcast(0).is_err());
        assert!(b.broadcast(2).is_err());
    }

    #[test]
    fn z_codes_have_one_row() {
        assert!(LatentCode::new(Space::Z, 2, 2, vec![0.0; 4]).is_err());
        assert!(LatentCode::new(Space::W, 2, 2, vec![0.0, 1.0, f32::INFINITY, 0.0]).is_err());
    }
}
