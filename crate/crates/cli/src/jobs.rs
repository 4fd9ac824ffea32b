//! Operations shared by the command line and the HTTP service, so both reach
//! identical results for identical parameters.

use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use idinv::editing::{manipulate, mix_codes, semantic_diffuse, shift_code, DiffusionSpec, EditSpec, Rect};
use idinv::editing::interpolate_code;
use idinv::evaluation::boundary::SemanticBoundary;
use idinv::inversion::{invert, Breakdown, InversionConfig, InversionResult, Models};
use idinv::training::EncoderModel;
use idinv::workspace::Checkpoint;
use idinv::{Error, FeatureExtractor, GeneratorModel, Image, LatentCode, Result};
use serde::{Deserialize, Serialize};

/// Models resolved from one checkpoint, shared read-only.
#[derive(Debug)]
pub struct Loaded {
    pub id: String,
    pub generator: GeneratorModel,
    pub encoder: EncoderModel,
    pub features: FeatureExtractor,
    pub boundaries: Vec<SemanticBoundary>,
}

impl Loaded {
    pub fn from_checkpoint(id: String, ck: Checkpoint) -> Result<Self> {
        let missing = |what: &str| Error::NotFound(format!("checkpoint {id} has no {what}"));
        Ok(Loaded {
            generator: ck.generator.ok_or_else(|| missing("generator"))?,
            encoder: ck.encoder.ok_or_else(|| missing("encoder"))?,
            features: ck.features.ok_or_else(|| missing("feature extractor"))?,
            boundaries: ck.boundaries,
            id,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
        Self::from_checkpoint(id, idinv::workspace::load_checkpoint(path)?)
    }

    pub fn models(&self) -> Models<'_> {
        Models::new(&self.generator, &self.encoder, &self.features)
    }

    pub fn boundary(&self, attribute: &str) -> Result<&SemanticBoundary> {
        self.boundaries
            .iter()
            .find(|b| b.attribute == attribute)
            .ok_or_else(|| Error::NotFound(format!("no boundary for attribute {attribute:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeOut {
    pub layers: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl From<&LatentCode> for CodeOut {
    fn from(c: &LatentCode) -> Self {
        CodeOut { layers: c.layers(), width: c.width(), values: c.values().to_vec() }
    }
}

/// Result of one job before encoding for transport.
#[derive(Clone, Debug)]
pub struct JobOutput {
    pub images: Vec<Image>,
    pub codes: Vec<LatentCode>,
    pub inversions: Vec<InversionResult>,
    /// The parameters actually used, after defaults and caps.
    pub parameters: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobResponse {
    pub operation: String,
    pub checkpoint: String,
    /// Base64 PNGs.
    pub images: Vec<String>,
    pub codes: Vec<CodeOut>,
    /// Best objective breakdown of each inversion performed.
    pub losses: Vec<Breakdown>,
    pub parameters: serde_json::Value,
    pub timing_ms: f64,
}

impl JobOutput {
    pub fn into_response(self, operation: &str, checkpoint: &str, started: Instant) -> Result<JobResponse> {
        Ok(JobResponse {
            operation: operation.to_string(),
            checkpoint: checkpoint.to_string(),
            images: self.images.iter().map(encode_png).collect::<Result<_>>()?,
            codes: self.codes.iter().map(CodeOut::from).collect(),
            losses: self.inversions.iter().map(|r| *r.best()).collect(),
            parameters: self.parameters,
            timing_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

pub fn encode_png(im: &Image) -> Result<String> {
    Ok(B64.encode(im.to_png_bytes()?))
}

pub fn decode_png(field: &str, text: &str) -> Result<Image> {
    let bytes = B64
        .decode(text.trim())
        .map_err(|e| Error::Decode { path: field.into(), reason: format!("base64: {e}") })?;
    Image::from_png_bytes(&bytes, Path::new(field))
}

/// `[start, end)` as sent over the wire.
pub fn layer_range(layers: Option<[usize; 2]>) -> Option<Range<usize>> {
    layers.map(|[a, b]| a..b)
}

fn params<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

pub fn run_invert(l: &Loaded, x: &Image, cfg: &InversionConfig) -> Result<JobOutput> {
    let r = invert(l.models(), x, cfg)?;
    Ok(JobOutput {
        images: vec![r.reconstruction.clone()],
        codes: vec![r.code.clone()],
        parameters: serde_json::json!({ "inversion": params(cfg) }),
        inversions: vec![r],
    })
}

pub fn run_edit(
    l: &Loaded,
    x: &Image,
    attribute: &str,
    alpha: f64,
    layers: Option<[usize; 2]>,
    cfg: &InversionConfig,
) -> Result<JobOutput> {
    let boundary = l.boundary(attribute)?.clone();
    let r = invert(l.models(), x, cfg)?;
    let spec = EditSpec { boundary, alpha, layers: layer_range(layers) };
    let edited = manipulate(&l.generator, &r.code, &spec)?;
    let code = shift_code(&r.code, &spec.boundary.normal, alpha, spec.layers.clone())?;
    Ok(JobOutput {
        images: vec![edited],
        codes: vec![code],
        parameters: serde_json::json!({
            "attribute": attribute, "alpha": alpha, "layers": layers, "inversion": params(cfg)
        }),
        inversions: vec![r],
    })
}

pub fn run_interpolate(l: &Loaded, a: &Image, b: &Image, t: f64, cfg: &InversionConfig) -> Result<JobOutput> {
    let ra = invert(l.models(), a, cfg)?;
    let rb = invert(l.models(), b, cfg)?;
    let code = interpolate_code(&ra.code, &rb.code, t)?;
    Ok(JobOutput {
        images: vec![l.generator.generate(&code)?],
        codes: vec![code],
        parameters: serde_json::json!({ "t": t, "inversion": params(cfg) }),
        inversions: vec![ra, rb],
    })
}

pub fn run_mix(
    l: &Loaded,
    content: &Image,
    style: &Image,
    layers: Option<[usize; 2]>,
    cfg: &InversionConfig,
) -> Result<JobOutput> {
    let rc = invert(l.models(), content, cfg)?;
    let rs = invert(l.models(), style, cfg)?;
    let code = mix_codes(&rc.code, &rs.code, layer_range(layers))?;
    Ok(JobOutput {
        images: vec![l.generator.generate(&code)?],
        codes: vec![code],
        parameters: serde_json::json!({ "layers": layers, "inversion": params(cfg) }),
        inversions: vec![rc, rs],
    })
}

/// Returns the diffused reconstruction followed by the naive stitch.
pub fn run_diffuse(l: &Loaded, target: &Image, context: &Image, spec: &DiffusionSpec) -> Result<JobOutput> {
    let r = semantic_diffuse(l.models(), target, context, spec)?;
    Ok(JobOutput {
        images: vec![r.inversion.reconstruction.clone(), r.stitched],
        codes: vec![r.inversion.code.clone()],
        parameters: params(spec),
        inversions: vec![r.inversion],
    })
}

/// Convenience for callers that only know the crop.
pub fn diffusion_spec(crop: Rect, paste: Option<(usize, usize)>, feather: usize, inversion: InversionConfig) -> DiffusionSpec {
    let (paste_top, paste_left) = paste.unwrap_or((crop.top, crop.left));
    DiffusionSpec { crop, paste_top, paste_left, feather, inversion }
}
