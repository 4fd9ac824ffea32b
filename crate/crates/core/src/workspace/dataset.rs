//! Image sources: a synthetic attribute-labelled shape renderer and PNG folders.
//!
//! Each synthetic image is a soft-edged coloured ellipse on a plain
//! background. Four binary attributes are defined by thresholding the
//! rendering parameters: `size`, `shade`, `x_position` and `aspect`. Labels
//! are drawn first (balanced per attribute) and each parameter is then
//! sampled from its side of the threshold, leaving a small gap around it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::image::Image;
use crate::rng::SeededRng;

pub const ATTRIBUTES: [&str; 4] = ["size", "shade", "x_position", "aspect"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f32,
    pub hi: f32,
}

impl Range {
    fn mid(&self) -> f32 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub resolution: usize,
    pub count: usize,
    pub channels: usize,
    /// Mean radius as a fraction of the side length.
    pub size: Range,
    /// Shape brightness in `[0, 1]`.
    pub shade: Range,
    /// Centre x as a fraction of the side length.
    pub x_position: Range,
    /// `log2(width / height)` of the ellipse.
    pub aspect: Range,
    /// Fraction of each range excluded around its threshold.
    pub gap: f32,
}

impl SyntheticSpec {
    pub fn new(resolution: usize, count: usize) -> Self {
        SyntheticSpec {
            resolution,
            count,
            channels: 3,
            size: Range { lo: 0.16, hi: 0.36 },
            shade: Range { lo: 0.3, hi: 1.0 },
            x_position: Range { lo: 0.3, hi: 0.7 },
            aspect: Range { lo: -0.9, hi: 0.9 },
            gap: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.count >= 1, "dataset count must be at least 1");
        ensure_arg!((4..=256).contains(&self.resolution), "resolution out of range");
        ensure_arg!(self.channels == 1 || self.channels == 3, "channels must be 1 or 3");
        ensure_arg!((0.0..0.9).contains(&self.gap), "gap must be in [0, 0.9)");
        let checks = [
            ("size", self.size, 0.02, 0.5),
            ("shade", self.shade, 0.0, 1.0),
            ("x_position", self.x_position, 0.0, 1.0),
            ("aspect", self.aspect, -3.0, 3.0),
        ];
        for (name, r, lo, hi) in checks {
            ensure_arg!(
                r.lo < r.hi && r.lo >= lo && r.hi <= hi,
                "{name} range [{}, {}] invalid (allowed within [{lo}, {hi}])",
                r.lo,
                r.hi
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        spec: SyntheticSpec,
        seed: u64,
    },
    Folder {
        path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic { spec, seed } => make_synthetic_dataset(spec, *seed),
            DatasetSpec::Folder { path } => load_image_folder(path),
        }
    }
}

/// Rendering parameters of one synthetic image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub size: f32,
    pub shade: f32,
    pub x_position: f32,
    pub aspect: f32,
    pub y_position: f32,
    pub tint: [f32; 3],
    pub background: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    /// Per-image binary attributes, ordered as [`ATTRIBUTES`].
    pub labels: Option<Vec<[bool; 4]>>,
    pub params: Option<Vec<ShapeParams>>,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.images.first().map(Image::shape)
    }

    /// Contiguous sub-range, keeping labels aligned.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            images: self.images[start..end].to_vec(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            params: self.params.as_ref().map(|p| p[start..end].to_vec()),
            names: self.names[start..end].to_vec(),
        }
    }

    /// Fraction of positive labels per attribute.
    pub fn balance(&self) -> Option<[f64; 4]> {
        let labels = self.labels.as_ref()?;
        let mut out = [0.0; 4];
        for l in labels {
            for k in 0..4 {
                out[k] += l[k] as u8 as f64;
            }
        }
        Some(out.map(|c| c / labels.len() as f64))
    }

    /// Writes `NNNNN.png` files in order.
    pub fn save_folder(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, im) in self.images.iter().enumerate() {
            im.save_png(&dir.join(format!("{i:05}.png")))?;
        }
        if let Some(labels) = &self.labels {
            let rows: Vec<serde_json::Value> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let mut m = serde_json::Map::new();
                    m.insert("file".into(), format!("{i:05}.png").into());
                    for (k, name) in ATTRIBUTES.iter().enumerate() {
                        m.insert((*name).into(), l[k].into());
                    }
                    m.into()
                })
                .collect();
            std::fs::write(dir.join("labels.json"), serde_json::to_vec_pretty(&rows)?)?;
        }
        Ok(())
    }
}

fn sample_side(rng: &mut SeededRng, r: Range, gap: f32, positive: bool) -> f32 {
    let half_gap = 0.5 * gap * (r.hi - r.lo);
    let mid = r.mid();
    if positive {
        rng.uniform(mid + half_gap, r.hi)
    } else {
        rng.uniform(r.lo, mid - half_gap)
    }
}

/// Balanced labels: exactly `floor(n/2)` or `ceil(n/2)` positives, shuffled.
fn balanced_labels(rng: &mut SeededRng, n: usize) -> Vec<bool> {
    let mut v: Vec<bool> = (0..n).map(|i| i < n / 2 + (n % 2) * rng.coin() as usize).collect();
    rng.shuffle(&mut v);
    v
}

pub fn make_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(seed);
    let n = spec.count;
    let cols: Vec<Vec<bool>> = (0..4).map(|_| balanced_labels(&mut rng, n)).collect();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for i in 0..n {
        let l = [cols[0][i], cols[1][i], cols[2][i], cols[3][i]];
        let p = ShapeParams {
            size: sample_side(&mut rng, spec.size, spec.gap, l[0]),
            shade: sample_side(&mut rng, spec.shade, spec.gap, l[1]),
            x_position: sample_side(&mut rng, spec.x_position, spec.gap, l[2]),
            aspect: sample_side(&mut rng, spec.aspect, spec.gap, l[3]),
            y_position: rng.uniform(0.35, 0.65),
            tint: [rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)],
            background: rng.uniform(0.0, 0.2),
        };
        images.push(render_shape(&p, spec.resolution, spec.channels)?);
        labels.push(l);
        params.push(p);
    }
    Ok(Dataset {
        images,
        labels: Some(labels),
        params: Some(params),
        names: (0..n).map(|i| format!("synthetic-{i:05}")).collect(),
    })
}

/// Labels implied by rendering parameters under `spec`'s thresholds.
pub fn labels_from_params(spec: &SyntheticSpec, p: &ShapeParams) -> [bool; 4] {
    [
        p.size > spec.size.mid(),
        p.shade > spec.shade.mid(),
        p.x_position > spec.x_position.mid(),
        p.aspect > spec.aspect.mid(),
    ]
}

pub fn render_shape(p: &ShapeParams, res: usize, channels: usize) -> Result<Image> {
    let s = res as f32;
    let ratio = 2f32.powf(p.aspect);
    let rx = p.size * s * ratio.sqrt();
    let ry = p.size * s / ratio.sqrt();
    let (cx, cy) = (p.x_position * s, p.y_position * s);
    let mut pixels = vec![0.0f32; channels * res * res];
    for y in 0..res {
        for x in 0..res {
            let dx = (x as f32 + 0.5 - cx) / rx;
            let dy = (y as f32 + 0.5 - cy) / ry;
            // approximate signed distance in pixels, soft edge one pixel wide
            let r = (dx * dx + dy * dy).sqrt();
            let sd = (r - 1.0) * rx.min(ry);
            let cover = (0.5 - sd).clamp(0.0, 1.0);
            for c in 0..channels {
                let tint = if channels == 3 { p.tint[c] } else { 1.0 };
                let v = p.background * (1.0 - cover) + p.shade * tint * cover;
                pixels[(c * res + y) * res + x] = 2.0 * v - 1.0;
            }
        }
    }
    Image::from_clamped(channels, res, res, pixels)
}

/// Loads every `.png` in `dir`, sorted by file name.
pub fn load_image_folder(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::NotFound(format!("image folder {}", dir.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::NotFound(format!("no PNG files in {}", dir.display())));
    }
    let mut images = Vec::with_capacity(files.len());
    for f in &files {
        let im = Image::load_png(f)?;
        if let Some(first) = images.first() {
            let first: &Image = first;
            ensure_arg!(
                first.shape() == im.shape(),
                "{} has shape {:?}, expected {:?}",
                f.display(),
                im.shape(),
                first.shape()
            );
        }
        images.push(im);
    }
    let names = files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    let labels = read_labels(dir, &files)?;
    Ok(Dataset { images, labels, params: None, names })
}

fn read_labels(dir: &Path, files: &[PathBuf]) -> Result<Option<Vec<[bool; 4]>>> {
    let path = dir.join("labels.json");
    if !path.exists() {
        return Ok(None);
    }
    let rows: Vec<serde_json::Map<String, serde_json::Value>> =
        serde_json::from_slice(&std::fs::read(&path)?)?;
    let by_file: std::collections::HashMap<&str, &serde_json::Map<String, serde_json::Value>> =
        rows.iter().filter_map(|r| Some((r.get("file")?.as_str()?, r))).collect();
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let name = f.file_name().unwrap().to_string_lossy();
        let row = by_file
            .get(name.as_ref())
            .ok_or_else(|| Error::Decode { path: path.clone(), reason: format!("no labels for {name}") })?;
        let mut l = [false; 4];
        for (k, attr) in ATTRIBUTES.iter().enumerate() {
            l[k] = row.get(*attr).and_then(|v| v.as_bool()).ok_or_else(|| Error::Decode {
                path: path.clone(),
                reason: format!("missing {attr} for {name}"),
            })?;
        }
        out.push(l);
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::new(16, 20);
        let a = make_synthetic_dataset(&spec, 3).unwrap();
        let b = make_synthetic_dataset(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images, make_synthetic_dataset(&spec, 4).unwrap().images);
    }

    #[test]
    fn labels_agree_with_parameters() {
        let spec = SyntheticSpec::new(16, 200);
        let d = make_synthetic_dataset(&spec, 1).unwrap();
        for (l, p) in d.labels.as_ref().unwrap().iter().zip(d.params.as_ref().unwrap()) {
            assert_eq!(*l, labels_from_params(&spec, p));
        }
    }

    #[test]
    fn large_set_is_balanced() {
        let spec = SyntheticSpec::new(8, 5000);
        let d = make_synthetic_dataset(&spec, 2).unwrap();
        for (k, frac) in d.balance().unwrap().iter().enumerate() {
            assert!((0.45..=0.55).contains(frac), "{} balance {frac}", ATTRIBUTES[k]);
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut spec = SyntheticSpec::new(16, 10);
        spec.size = Range { lo: 0.3, hi: 0.2 };
        assert!(make_synthetic_dataset(&spec, 0).is_err());
        let mut spec = SyntheticSpec::new(16, 0);
        spec.count = 0;
        assert!(make_synthetic_dataset(&spec, 0).is_err());
    }

    #[test]
    fn bigger_shapes_cover_more_pixels() {
        let base = ShapeParams {
            size: 0.15,
            shade: 1.0,
            x_position: 0.5,
            aspect: 0.0,
            y_position: 0.5,
            tint: [1.0; 3],
            background: 0.0,
        };
        let cover = |p: &ShapeParams| {
            render_shape(p, 16, 1).unwrap().pixels().iter().map(|v| (v + 1.0) / 2.0).sum::<f32>()
        };
        let big = ShapeParams { size: 0.3, ..base };
        assert!(cover(&big) > 2.0 * cover(&base));
    }
}
