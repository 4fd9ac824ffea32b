//! Images, masks and pixel-space losses.
//!
//! Pixels are `f32` in `[-1, 1]`, stored channel-major as `[C, H, W]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{ensure_arg, Error, Result};

const RANGE_SLACK: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        ensure_arg!(channels == 1 || channels == 3, "channels must be 1 or 3, got {channels}");
        ensure_arg!(height > 0 && width > 0, "image must be non-empty");
        ensure_arg!(
            pixels.len() == channels * height * width,
            "pixel buffer has {} values, expected {}",
            pixels.len(),
            channels * height * width
        );
        for &p in &pixels {
            ensure_arg!(p.is_finite(), "non-finite pixel");
            ensure_arg!(
                (-1.0 - RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&p),
                "pixel {p} outside [-1, 1]"
            );
        }
        Ok(Image { channels, height, width, pixels })
    }

    /// Builds an image, clamping values into `[-1, 1]`.
    pub fn from_clamped(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        Image::new(channels, height, width, pixels.into_iter().map(|p| p.clamp(-1.0, 1.0)).collect())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Image::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub(crate) fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    /// Stacks images into an `[N, C, H, W]` tensor.
    pub fn batch<T: Real>(images: &[&Image]) -> Tensor<T> {
        assert!(!images.is_empty(), "empty image batch");
        let [c, h, w] = images[0].shape();
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for im in images {
            assert_eq!(im.shape(), [c, h, w], "mixed image shapes in batch");
            data.extend(im.pixels.iter().map(|&p| T::from(p).unwrap()));
        }
        Tensor::new(vec![images.len(), c, h, w], data)
    }

    /// Splits an `[N, C, H, W]` tensor back into images, clamping to range.
    pub fn unbatch<T: Real>(t: &Tensor<T>) -> Result<Vec<Image>> {
        let s = t.shape();
        ensure_arg!(s.len() == 4, "expected [N, C, H, W], got {s:?}");
        let per = s[1] * s[2] * s[3];
        t.data()
            .chunks(per)
            .map(|chunk| {
                let px = chunk.iter().map(|v| v.to_f32().unwrap()).collect();
                Image::from_clamped(s[1], s[2], s[3], px)
            })
            .collect()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        unrescale(&self.pixels)
    }

    /// Encodes as an 8-bit PNG (RGB or grayscale).
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let raw = self.to_u8();
        let (h, w) = (self.height, self.width);
        let mut interleaved = vec![0u8; raw.len()];
        for c in 0..self.channels {
            for i in 0..h * w {
                interleaved[i * self.channels + c] = raw[c * h * w + i];
            }
        }
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        let mut out = Vec::new();
        image::ImageEncoder::write_image(
            image::codecs::png::PngEncoder::new(&mut out),
            &interleaved,
            w as u32,
            h as u32,
            color,
        )
        .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8], origin: &Path) -> Result<Image> {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Decode { path: origin.to_path_buf(), reason: e.to_string() })?;
        let (channels, raw, w, h) = if decoded.color().has_color() {
            let rgb = decoded.to_rgb8();
            let (w, h) = rgb.dimensions();
            (3, rgb.into_raw(), w as usize, h as usize)
        } else {
            let l = decoded.to_luma8();
            let (w, h) = l.dimensions();
            (1, l.into_raw(), w as usize, h as usize)
        };
        let mut planar = vec![0f32; raw.len()];
        for i in 0..h * w {
            for c in 0..channels {
                planar[c * h * w + i] = level_to_unit(raw[i * channels + c]);
            }
        }
        Image::new(channels, h, w, planar)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path)?;
        Image::from_png_bytes(&bytes, path)
    }
}

fn level_to_unit(v: u8) -> f32 {
    2.0 * v as f32 / 255.0 - 1.0
}

/// Maps raw 8-bit levels onto `[-1, 1]`.
pub fn rescale_pixels(raw: &[i32]) -> Result<Vec<f32>> {
    raw.iter()
        .map(|&v| {
            ensure_arg!((0..=255).contains(&v), "pixel level {v} outside [0, 255]");
            Ok(level_to_unit(v as u8))
        })
        .collect()
}

/// Inverse of [`rescale_pixels`], rounding to the nearest level.
pub fn unrescale(pixels: &[f32]) -> Vec<u8> {
    pixels
        .iter()
        .map(|&p| ((p.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
        .collect()
}

/// Per-pixel weights in `[0, 1]`, shape `[1, H, W]`, shared by all channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    weights: Vec<f32>,
}

impl Mask {
    pub fn new(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        ensure_arg!(weights.len() == height * width, "mask size mismatch");
        ensure_arg!(
            weights.iter().all(|w| (0.0..=1.0).contains(w)),
            "mask weights must lie in [0, 1]"
        );
        Ok(Mask { height, width, weights })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask { height, width, weights: vec![1.0; height * width] }
    }

    /// Rectangle of ones; `feather` pixels of linear ramp just outside the
    /// rectangle when non-zero.
    pub fn rect(
        height: usize,
        width: usize,
        top: usize,
        left: usize,
        rect_h: usize,
        rect_w: usize,
        feather: usize,
    ) -> Result<Self> {
        ensure_arg!(
            top + rect_h <= height && left + rect_w <= width,
            "mask rectangle exceeds {height}x{width}"
        );
        let mut weights = vec![0.0; height * width];
        for y in 0..height {
            for x in 0..width {
                let dy = dist_outside(y, top, top + rect_h);
                let dx = dist_outside(x, left, left + rect_w);
                let d = dy.max(dx);
                weights[y * width + x] = if d == 0 {
                    1.0
                } else if d <= feather {
                    1.0 - d as f32 / (feather + 1) as f32
                } else {
                    0.0
                };
            }
        }
        Ok(Mask { height, width, weights })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn support(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum()
    }
}

fn dist_outside(v: usize, lo: usize, hi: usize) -> usize {
    if v < lo {
        lo - v
    } else if v >= hi {
        v + 1 - hi
    } else {
        0
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    ensure_arg!(a.shape() == b.shape(), "image shapes differ: {:?} vs {:?}", a.shape(), b.shape());
    Ok(())
}

/// Mean squared pixel error.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.pixels.len() as f64)
}

/// `sum m (a - b)^2 / (C * sum m)`: squared error averaged over the mask
/// support and over channels.
pub fn masked_mse(a: &Image, b: &Image, m: &Mask) -> Result<f64> {
    check_pair(a, b)?;
    ensure_arg!(
        m.height == a.height && m.width == a.width,
        "mask is {}x{}, image is {}x{}",
        m.height,
        m.width,
        a.height,
        a.width
    );
    let support = m.support();
    if support <= 0.0 {
        return Err(Error::DegenerateMask);
    }
    let hw = a.height * a.width;
    let mut acc = 0.0f64;
    for c in 0..a.channels {
        for i in 0..hw {
            let w = m.weights[i];
            if w == 0.0 {
                continue;
            }
            let d = a.pixels[c * hw + i] as f64 - b.pixels[c * hw + i] as f64;
            acc += w as f64 * d * d;
        }
    }
    Ok(acc / (support * a.channels as f64))
}
