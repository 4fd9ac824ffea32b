//! Editing on inverted codes: boundary manipulation, interpolation, style
//! mixing and semantic diffusion.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::evaluation::boundary::SemanticBoundary;
use crate::image::{Image, Mask};
use crate::inversion::{invert, InitStrategy, InversionConfig, InversionResult, Models};
use crate::latent::{LatentCode, Space};
use crate::synthesis::GeneratorModel;

/// Number of trailing layers replaced by default in style mixing.
pub const DEFAULT_MIX_LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub boundary: SemanticBoundary,
    pub alpha: f64,
    /// Rows to shift; all rows when absent.
    #[serde(default)]
    pub layers: Option<Range<usize>>,
}

fn check_range(r: &Range<usize>, layers: usize) -> Result<()> {
    ensure_arg!(r.start <= r.end && r.end <= layers, "layer range {r:?} outside [0, {layers})");
    Ok(())
}

fn w_code(layers: usize, width: usize, values: Vec<f32>) -> Result<LatentCode> {
    LatentCode::new(Space::W, layers, width, values)
}

/// `z + alpha * n` on the selected rows.
pub fn shift_code(z: &LatentCode, normal: &[f64], alpha: f64, layers: Option<Range<usize>>) -> Result<LatentCode> {
    ensure_arg!(normal.len() == z.width(), "boundary width {} != code width {}", normal.len(), z.width());
    let rows = layers.unwrap_or(0..z.layers());
    check_range(&rows, z.layers())?;
    let d = z.width();
    let mut v = z.values().to_vec();
    for l in rows {
        for (k, n) in normal.iter().enumerate() {
            v[l * d + k] = (v[l * d + k] as f64 + alpha * n) as f32;
        }
    }
    w_code(z.layers(), d, v)
}

pub fn manipulate(g: &GeneratorModel, z: &LatentCode, spec: &EditSpec) -> Result<Image> {
    g.generate(&shift_code(z, &spec.boundary.normal, spec.alpha, spec.layers.clone())?)
}

/// `(1 - t) * a + t * b`.
pub fn interpolate_code(a: &LatentCode, b: &LatentCode, t: f64) -> Result<LatentCode> {
    ensure_arg!((0.0..=1.0).contains(&t), "interpolation weight {t} outside [0, 1]");
    ensure_arg!(
        a.layers() == b.layers() && a.width() == b.width() && a.space() == b.space(),
        "codes differ in shape"
    );
    let v = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32)
        .collect();
    LatentCode::new(a.space(), a.layers(), a.width(), v)
}

pub fn interpolate(g: &GeneratorModel, a: &LatentCode, b: &LatentCode, t: f64) -> Result<Image> {
    g.generate(&interpolate_code(a, b, t)?)
}

/// `frames` evenly spaced images from `a` to `b`, endpoints included.
pub fn interpolation_frames(g: &GeneratorModel, a: &LatentCode, b: &LatentCode, frames: usize) -> Result<Vec<Image>> {
    ensure_arg!(frames >= 2, "need at least two frames");
    let codes = (0..frames)
        .map(|i| interpolate_code(a, b, i as f64 / (frames - 1) as f64))
        .collect::<Result<Vec<_>>>()?;
    g.generate_batch(&codes.iter().collect::<Vec<_>>())
}

/// The last `DEFAULT_MIX_LAYERS` rows (or all rows if fewer).
pub fn default_mix_layers(layers: usize) -> Range<usize> {
    layers.saturating_sub(DEFAULT_MIX_LAYERS)..layers
}

/// Rows in `layers` from `style`, the rest from `content`.
pub fn mix_codes(content: &LatentCode, style: &LatentCode, layers: Option<Range<usize>>) -> Result<LatentCode> {
    ensure_arg!(
        content.layers() == style.layers() && content.width() == style.width(),
        "codes differ in shape"
    );
    let rows = layers.unwrap_or_else(|| default_mix_layers(content.layers()));
    check_range(&rows, content.layers())?;
    let d = content.width();
    let mut v = content.values().to_vec();
    v[rows.start * d..rows.end * d].copy_from_slice(&style.values()[rows.start * d..rows.end * d]);
    w_code(content.layers(), d, v)
}

pub fn style_mix(g: &GeneratorModel, content: &LatentCode, style: &LatentCode, layers: Option<Range<usize>>) -> Result<Image> {
    g.generate(&mix_codes(content, style, layers)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn full(height: usize, width: usize) -> Self {
        Rect { top: 0, left: 0, height, width }
    }

    /// A `side x side` square centred in an `h x w` frame.
    pub fn centered(h: usize, w: usize, side: usize) -> Self {
        Rect { top: h.saturating_sub(side) / 2, left: w.saturating_sub(side) / 2, height: side, width: side }
    }

    fn fits(&self, h: usize, w: usize) -> bool {
        self.top + self.height <= h && self.left + self.width <= w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    /// Region cut from the target.
    pub crop: Rect,
    /// Top-left corner of the paste on the context.
    pub paste_top: usize,
    pub paste_left: usize,
    /// Width of the linear ramp around the pasted region, in pixels.
    #[serde(default)]
    pub feather: usize,
    #[serde(default)]
    pub inversion: InversionConfig,
}

impl DiffusionSpec {
    /// Crop pasted at the same position it was cut from.
    pub fn in_place(crop: Rect) -> Self {
        DiffusionSpec { crop, paste_top: crop.top, paste_left: crop.left, feather: 0, inversion: InversionConfig::default() }
    }

    pub fn mask(&self, h: usize, w: usize) -> Result<Mask> {
        Mask::rect(h, w, self.paste_top, self.paste_left, self.crop.height, self.crop.width, self.feather)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionResult {
    pub stitched: Image,
    pub mask: Mask,
    pub inversion: InversionResult,
}

/// Pastes `spec.crop` of `target` onto `context`.
pub fn stitch(target: &Image, context: &Image, spec: &DiffusionSpec) -> Result<Image> {
    ensure_arg!(target.channels() == context.channels(), "target and context differ in channels");
    let c = spec.crop;
    if c.height == 0 || c.width == 0 {
        return Err(Error::DegenerateMask);
    }
    ensure_arg!(c.fits(target.height(), target.width()), "crop {c:?} outside the target");
    let paste = Rect { top: spec.paste_top, left: spec.paste_left, ..c };
    ensure_arg!(paste.fits(context.height(), context.width()), "pasted region {paste:?} outside the context");
    let mut out = context.clone();
    for ch in 0..target.channels() {
        for y in 0..c.height {
            for x in 0..c.width {
                out.set(ch, paste.top + y, paste.left + x, target.get(ch, c.top + y, c.left + x));
            }
        }
    }
    Ok(out)
}

/// Stitches the crop into the context, initializes from the encoder on the
/// stitched image, then inverts with the pixel term restricted to the pasted
/// region.
pub fn semantic_diffuse(m: Models, target: &Image, context: &Image, spec: &DiffusionSpec) -> Result<DiffusionResult> {
    let stitched = stitch(target, context, spec)?;
    let mask = spec.mask(context.height(), context.width())?;
    let cfg = InversionConfig {
        init: InitStrategy::Given,
        given_code: Some(m.e.encode(&stitched)?),
        mask: Some(mask.clone()),
        ..spec.inversion.clone()
    };
    let inversion = invert(m, &stitched, &cfg)?;
    Ok(DiffusionResult { stitched, mask, inversion })
}
