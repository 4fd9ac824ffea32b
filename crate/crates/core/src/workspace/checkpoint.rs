//! Checkpoint bundles: a directory holding `manifest.json` and one raw file
//! per parameter array.
//!
//! Tensor files start with a 16-byte little-endian header (magic `IDTN`,
//! dtype `u16`, rank `u16`, four `u16` dims with unused dims zero) followed
//! by the values as little-endian `f32`. The manifest records each file's
//! shape and SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{ensure_arg, Error, Result};
use crate::evaluation::boundary::SemanticBoundary;
use crate::nn::Params;
use crate::perception::{FeatureConfig, FeatureExtractor};
use crate::rng::RNG_ALGORITHM;
use crate::synthesis::{GeneratorConfig, GeneratorModel};
use crate::training::nets::{DiscriminatorConfig, DiscriminatorModel, EncoderConfig, EncoderModel};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: [u8; 4] = *b"IDTN";
pub const DTYPE_F32: u16 = 1;
const HEADER_LEN: usize = 16;
const MAX_RANK: usize = 4;

/// Every model a pipeline stage may produce; absent parts are skipped.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub generator: Option<GeneratorModel>,
    pub encoder: Option<EncoderModel>,
    pub discriminator: Option<DiscriminatorModel>,
    pub features: Option<FeatureExtractor>,
    pub boundaries: Vec<SemanticBoundary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry<C> {
    pub config: C,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub frozen: bool,
    #[serde(flatten)]
    pub model: ModelEntry<GeneratorConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub tap: String,
    #[serde(flatten)]
    pub model: ModelEntry<FeatureConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub rng_algorithm: String,
    pub generator: Option<GeneratorEntry>,
    pub encoder: Option<ModelEntry<EncoderConfig>>,
    pub discriminator: Option<ModelEntry<DiscriminatorConfig>>,
    pub features: Option<FeatureEntry>,
    pub boundaries: Vec<SemanticBoundary>,
}

pub fn encode_tensor(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let shape = t.shape();
    ensure_arg!(shape.len() <= MAX_RANK, "tensor rank {} exceeds {MAX_RANK}", shape.len());
    ensure_arg!(shape.iter().all(|&d| d <= u16::MAX as usize), "tensor dimension exceeds {}", u16::MAX);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u16).to_le_bytes());
    for k in 0..MAX_RANK {
        out.extend_from_slice(&(shape.get(k).copied().unwrap_or(0) as u16).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], origin: &str) -> Result<Tensor<f32>> {
    let bad = |why: &str| Error::Corruption(format!("{origin}: {why}"));
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    if u16_at(4) != DTYPE_F32 as usize {
        return Err(bad("unsupported dtype"));
    }
    let rank = u16_at(6);
    if rank > MAX_RANK {
        return Err(bad("rank too large"));
    }
    let shape: Vec<usize> = (0..rank).map(|k| u16_at(8 + 2 * k)).collect();
    let n: usize = shape.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(bad(&format!("expected {} data bytes, found {}", 4 * n, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor::new(shape, data))
}

fn write_params(dir: &Path, model: &str, params: &Params) -> Result<Vec<TensorEntry>> {
    let mut entries = Vec::with_capacity(params.len());
    for (i, (name, t)) in params.iter().enumerate() {
        let file = format!("tensors/{model}.{i:04}.bin");
        let bytes = encode_tensor(t)?;
        fs::write(dir.join(&file), &bytes)?;
        entries.push(TensorEntry {
            name: name.to_string(),
            file,
            shape: t.shape().to_vec(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    Ok(entries)
}

fn read_params(dir: &Path, entries: &[TensorEntry]) -> Result<Params> {
    let mut params = Params::new();
    for e in entries {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path)
            .map_err(|err| Error::Corruption(format!("manifest references {} which cannot be read: {err}", e.file)))?;
        if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
            // decode first so truncation is reported as such
            decode_tensor(&bytes, &e.file)?;
            return Err(Error::Corruption(format!("{}: hash mismatch", e.file)));
        }
        let t = decode_tensor(&bytes, &e.file)?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Corruption(format!("{}: header dims {:?} differ from manifest {:?}", e.file, t.shape(), e.shape)));
        }
        params.insert(e.name.clone(), t);
    }
    Ok(params)
}

fn build_manifest(ck: &Checkpoint, dir: &Path) -> Result<Manifest> {
    Ok(Manifest {
        format_version: FORMAT_VERSION,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        generator: match &ck.generator {
            Some(g) => Some(GeneratorEntry {
                frozen: g.is_frozen(),
                model: ModelEntry { config: g.config().clone(), tensors: write_params(dir, "generator", g.params())? },
            }),
            None => None,
        },
        encoder: match &ck.encoder {
            Some(e) => Some(ModelEntry { config: e.config().clone(), tensors: write_params(dir, "encoder", e.params())? }),
            None => None,
        },
        discriminator: match &ck.discriminator {
            Some(d) => Some(ModelEntry {
                config: d.config().clone(),
                tensors: write_params(dir, "discriminator", d.params())?,
            }),
            None => None,
        },
        features: match &ck.features {
            Some(f) => Some(FeatureEntry {
                tap: f.config().tap_name(),
                model: ModelEntry { config: f.config().clone(), tensors: write_params(dir, "features", f.params())? },
            }),
            None => None,
        },
        boundaries: ck.boundaries.clone(),
    })
}

/// Writes the bundle into a sibling temporary directory, then swaps it into
/// place, so readers never observe a partial bundle.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = path.file_name().ok_or_else(|| crate::error::invalid("checkpoint path has no file name"))?;
    let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("tensors"))?;
    let manifest = build_manifest(ck, &tmp)?;
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(tmp.join("manifest.json"), text)?;
    if path.exists() {
        let old = parent.join(format!(".{}.old-{}", name.to_string_lossy(), std::process::id()));
        fs::rename(path, &old)?;
        fs::rename(&tmp, path)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&tmp, path)?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = path.join("manifest.json");
    if !file.exists() {
        return Err(Error::NotFound(format!("checkpoint manifest {}", file.display())));
    }
    let value: serde_json::Value = serde_json::from_slice(&fs::read(&file)?)?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found, expected: FORMAT_VERSION });
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| Error::Corruption(format!("invalid manifest: {e}")))?;
    if manifest.rng_algorithm != RNG_ALGORITHM {
        return Err(Error::Corruption(format!(
            "checkpoint was written with RNG {}, this build uses {RNG_ALGORITHM}",
            manifest.rng_algorithm
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let m = read_manifest(path)?;
    let mut ck = Checkpoint { boundaries: m.boundaries.clone(), ..Default::default() };
    if let Some(g) = &m.generator {
        let params = read_params(path, &g.model.tensors)?;
        ck.generator = Some(GeneratorModel::from_parts(g.model.config.clone(), params, g.frozen)?);
    }
    if let Some(e) = &m.encoder {
        ck.encoder = Some(EncoderModel::from_parts(e.config.clone(), read_params(path, &e.tensors)?)?);
    }
    if let Some(d) = &m.discriminator {
        ck.discriminator = Some(DiscriminatorModel::from_parts(d.config.clone(), read_params(path, &d.tensors)?)?);
    }
    if let Some(f) = &m.features {
        if f.tap != f.model.config.tap_name() {
            return Err(Error::Corruption(format!("feature tap {} does not match config", f.tap)));
        }
        ck.features = Some(FeatureExtractor::from_parts(f.model.config.clone(), read_params(path, &f.model.tensors)?)?);
    }
    Ok(ck)
}

/// Every file of a bundle, relative path and bytes, in sorted order.
pub fn bundle_files(path: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(path).unwrap().to_path_buf();
                out.push((rel, fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tower::TowerConfig;
    use proptest::prelude::*;

    fn bundle() -> Checkpoint {
        let mut rng = SeededRng::new(3);
        let mut g = GeneratorModel::new(GeneratorConfig::toy(), &mut rng).unwrap();
        g.freeze();
        let mean = g.mean_w(&mut rng, 16).unwrap();
        let e = EncoderModel::new(EncoderConfig::for_generator(&g, vec![4, 4]), &mean, &mut rng).unwrap();
        let tower = TowerConfig { resolution: 8, channels: 3, feature_maps: vec![4, 4] };
        let d = DiscriminatorModel::new(DiscriminatorConfig { tower: tower.clone(), hidden: 4 }, &mut rng).unwrap();
        let mut f = FeatureExtractor::new(FeatureConfig { tower, outputs: 4 }, &mut rng).unwrap();
        f.freeze();
        let b = SemanticBoundary { attribute: "size".into(), normal: vec![0.6, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], bias: 0.1 };
        Checkpoint { generator: Some(g), encoder: Some(e), discriminator: Some(d), features: Some(f), boundaries: vec![b] }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let ck = bundle();
        save_checkpoint(&ck, &a).unwrap();
        let back = load_checkpoint(&a).unwrap();
        assert_eq!(back.generator.as_ref().unwrap().params(), ck.generator.as_ref().unwrap().params());
        assert!(back.generator.as_ref().unwrap().is_frozen());
        assert_eq!(back.encoder, ck.encoder);
        assert_eq!(back.discriminator, ck.discriminator);
        assert_eq!(back.boundaries, ck.boundaries);
        save_checkpoint(&back, &b).unwrap();
        assert_eq!(bundle_files(&a).unwrap(), bundle_files(&b).unwrap());
        // overwrite in place
        save_checkpoint(&back, &a).unwrap();
        assert_eq!(bundle_files(&a).unwrap(), bundle_files(&b).unwrap());
    }

    #[test]
    fn damaged_bundles_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck");
        save_checkpoint(&bundle(), &p).unwrap();
        let file = p.join("tensors/generator.0000.bin");
        let bytes = fs::read(&file).unwrap();
        fs::write(&file, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(&err, Error::Corruption(m) if m.contains("data bytes")), "{err}");

        fs::remove_file(&file).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Corruption(_))));

        fs::write(&file, &bytes).unwrap();
        let other = p.join("tensors/encoder.0000.bin");
        let mut enc = fs::read(&other).unwrap();
        let last = enc.len() - 1;
        enc[last] ^= 1;
        fs::write(&other, &enc).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Corruption(m)) if m.contains("hash")));
    }

    #[test]
    fn version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck");
        save_checkpoint(&Checkpoint::default(), &p).unwrap();
        let text = fs::read_to_string(p.join("manifest.json")).unwrap();
        fs::write(p.join("manifest.json"), text.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::UnsupportedVersion { found: 7, expected: 1 })));
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::NotFound(_))));
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, -0.0]);
        let b = encode_tensor(&t).unwrap();
        assert_eq!(b.len(), 16 + 24);
        assert_eq!(&b[..4], b"IDTN");
        assert_eq!(&b[4..16], &[1, 0, 2, 0, 2, 0, 3, 0, 0, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
    }

    proptest! {
        #[test]
        fn tensor_roundtrip_is_bit_exact(bits in proptest::collection::vec(any::<u32>(), 1..40)) {
            let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let t = Tensor::new(vec![data.len()], data);
            let back = decode_tensor(&encode_tensor(&t).unwrap(), "t").unwrap();
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
