use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use idinv::editing::{interpolation_frames, Rect};
use idinv::evaluation::{fit_probe_boundaries, metric_report, semantic_probe_experiment, Inverter, SwdConfig};
use idinv::inversion::{InitStrategy, InversionConfig};
use idinv::perception::train_feature_extractor;
use idinv::training::{
    train_conventional_encoder, train_domain_guided_encoder, train_gan, write_jsonl, TrainingConfig,
};
use idinv::workspace::{load_checkpoint, save_checkpoint, Checkpoint, ExperimentConfig, SyntheticSpec, ATTRIBUTES};
use idinv::{Error, GeneratorConfig, Image, Result};
use serde::Serialize;

use crate::jobs::{self, JobOutput, Loaded};
use crate::service;

pub const HOME_VAR: &str = "IDINV_HOME";

#[derive(Debug, Parser)]
#[command(name = "idinv", version, about = "In-domain GAN inversion toolkit")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output location; defaults to a path under $IDINV_HOME.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled synthetic shape dataset to a PNG folder.
    MakeData(MakeDataArgs),
    /// Train the attribute classifier and the GAN; writes a checkpoint.
    TrainGan(TrainGanArgs),
    /// Train an encoder against the frozen generator in a checkpoint.
    TrainEncoder(TrainEncoderArgs),
    Invert(InvertArgs),
    /// Invert, then move the code along an attribute boundary.
    Edit(EditArgs),
    Interpolate(InterpolateArgs),
    /// Invert two images and swap late layers.
    Mix(MixArgs),
    /// Paste a crop into a context image and invert the blend.
    Diffuse(DiffuseArgs),
    /// Fit attribute boundaries and score inverters against labels.
    Probe(ProbeArgs),
    /// Compare two image folders.
    Evaluate(EvaluateArgs),
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Small,
    Toy,
}

impl Profile {
    fn generator(self) -> GeneratorConfig {
        match self {
            Profile::Desk => GeneratorConfig::desk(),
            Profile::Small => GeneratorConfig::small(),
            Profile::Toy => GeneratorConfig::toy(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    DomainGuided,
    Conventional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Init {
    Encoder,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Mse,
    Swd,
    Ffd,
    All,
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 5000)]
    pub count: usize,
    /// Experiment config whose dataset section replaces the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainGanArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub feature_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Directory for JSONL training logs.
    #[arg(long)]
    pub logs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainEncoderArgs {
    #[arg(long, value_enum, default_value_t = Mode::DomainGuided)]
    pub mode: Mode,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub logs: Option<PathBuf>,
}

/// Inversion flags; unset flags take the library defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct InversionArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub init: Option<Init>,
    #[arg(long)]
    pub lambda_dom: Option<f64>,
    #[arg(long)]
    pub lambda_vgg: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f32>,
}

impl InversionArgs {
    pub fn config(&self, seed: u64) -> InversionConfig {
        let d = InversionConfig::default();
        InversionConfig {
            init: match self.init {
                Some(Init::Random) => InitStrategy::Random,
                Some(Init::Encoder) | None => InitStrategy::Encoder,
            },
            lambda_dom: self.lambda_dom.unwrap_or(d.lambda_dom),
            lambda_vgg: self.lambda_vgg.unwrap_or(d.lambda_vgg),
            steps: self.steps.unwrap_or(d.steps),
            step_size: self.step_size.unwrap_or(d.step_size),
            seed,
            ..d
        }
    }
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub attribute: String,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Layer range `start:end` to edit; all layers when unset.
    #[arg(long, value_parser = parse_layers)]
    pub layers: Option<[usize; 2]>,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub image_a: PathBuf,
    #[arg(long)]
    pub image_b: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long, value_parser = parse_layers)]
    pub layers: Option<[usize; 2]>,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

#[derive(Debug, Args)]
pub struct DiffuseArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub context: PathBuf,
    /// `top,left,height,width` on the target.
    #[arg(long, value_parser = parse_rect)]
    pub crop: Rect,
    /// `top,left` on the context; defaults to the crop position.
    #[arg(long, value_parser = parse_pair)]
    pub paste: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    pub feather: usize,
    #[command(flatten)]
    pub inversion: InversionArgs,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Generator samples used to fit each boundary.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Labelled image folder to probe; boundaries are only fitted when unset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value_t = Metric::All)]
    pub metric: Metric,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Needed for the feature distance.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, default_value_t = service::DEFAULT_STEP_CAP)]
    pub step_cap: usize,
}

fn parse_layers(s: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    Ok([a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?])
}

fn parse_numbers(s: &str, n: usize) -> std::result::Result<Vec<usize>, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated integers"));
    }
    Ok(v)
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let v = parse_numbers(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_rect(s: &str) -> std::result::Result<Rect, String> {
    let v = parse_numbers(s, 4)?;
    Ok(Rect { top: v[0], left: v[1], height: v[2], width: v[3] })
}

pub fn home() -> PathBuf {
    std::env::var_os(HOME_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("idinv-work"))
}

fn default_checkpoint(given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| home().join("checkpoint"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_log(path: &Path, log: &[idinv::training::StepRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_jsonl(log, fs::File::create(path)?)
}

fn read_config(path: &Option<PathBuf>) -> Result<Option<ExperimentConfig>> {
    path.as_deref().map(ExperimentConfig::load).transpose()
}

/// Writes images, codes, trace and `result.json` for a job.
fn write_job(out: &Path, operation: &str, checkpoint: &str, output: JobOutput, names: &[&str]) -> Result<()> {
    fs::create_dir_all(out)?;
    for (im, name) in output.images.iter().zip(names) {
        im.save_png(&out.join(format!("{name}.png")))?;
    }
    for (i, r) in output.inversions.iter().enumerate() {
        r.write_trace_jsonl(fs::File::create(out.join(format!("trace{i}.jsonl")))?)?;
    }
    let response = output.into_response(operation, checkpoint, Instant::now())?;
    let summary = serde_json::json!({
        "operation": response.operation,
        "checkpoint": response.checkpoint,
        "images": names.iter().take(response.images.len()).map(|n| format!("{n}.png")).collect::<Vec<_>>(),
        "codes": response.codes,
        "losses": response.losses,
        "parameters": response.parameters,
    });
    write_json(&out.join("result.json"), &summary)?;
    println!("{}", serde_json::to_string(&serde_json::json!({ "operation": operation, "losses": response.losses }))?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let out = |name: &str| cli.out.clone().unwrap_or_else(|| home().join(name));
    match &cli.command {
        Command::MakeData(a) => {
            let spec = match read_config(&a.config)? {
                Some(cfg) => cfg.dataset,
                None => idinv::DatasetSpec::Synthetic { spec: SyntheticSpec::new(a.resolution, a.count), seed },
            };
            let data = spec.load()?;
            let dir = out("data");
            data.save_folder(&dir)?;
            let balance = data.balance();
            write_json(&dir.join("dataset.json"), &serde_json::json!({ "spec": spec, "count": data.len(), "balance": balance }))?;
            println!("wrote {} images to {}", data.len(), dir.display());
        }
        Command::TrainGan(a) => {
            let data = idinv::workspace::load_image_folder(&a.data)?;
            let shape = data.image_shape().unwrap_or_default();
            let mut exp = match read_config(&a.config)? {
                Some(cfg) => cfg,
                None => ExperimentConfig::for_generator(a.profile.generator(), data.len(), seed),
            };
            if shape[1] != exp.gan.generator.resolution || shape[0] != exp.gan.generator.channels {
                return Err(Error::InvalidArgument(format!(
                    "images are {:?} but the generator makes {}x{}x{}",
                    shape, exp.gan.generator.channels, exp.gan.generator.resolution, exp.gan.generator.resolution
                )));
            }
            if let Some(s) = a.steps {
                exp.gan.steps = s;
            }
            if let Some(s) = a.feature_steps {
                exp.features.steps = s;
            }
            if let Some(lr) = a.lr {
                exp.gan.learning_rate = lr;
            }
            let logs = a.logs.clone().unwrap_or_else(|| home().join("logs"));
            let features = train_feature_extractor(&data, &exp.features)?;
            log::info!("attribute classifier held-out accuracy {:.3}", features.heldout_accuracy);
            let gan = train_gan(&data, &exp.gan)?;
            write_log(&logs.join("gan.jsonl"), &gan.log)?;
            write_json(
                &logs.join("features.json"),
                &serde_json::json!({
                    "heldout_accuracy": features.heldout_accuracy,
                    "per_attribute_accuracy": features.per_attribute_accuracy,
                    "attributes": ATTRIBUTES,
                    "config": exp.features,
                }),
            )?;
            let path = out("checkpoint");
            let ck = Checkpoint {
                generator: Some(gan.generator),
                discriminator: Some(gan.discriminator),
                features: Some(features.extractor),
                ..Default::default()
            };
            save_checkpoint(&ck, &path)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::TrainEncoder(a) => {
            let path = default_checkpoint(&a.checkpoint);
            let mut ck = load_checkpoint(&path)?;
            let g = ck.generator.as_ref().ok_or_else(|| Error::NotFound("checkpoint has no generator".into()))?;
            let mut cfg = match read_config(&a.config)? {
                Some(c) => c.training,
                None => TrainingConfig { seed, ..Default::default() },
            };
            if let Some(s) = a.steps {
                cfg.steps = s;
            }
            if let Some(lr) = a.lr {
                cfg.lr_encoder = lr;
                cfg.lr_discriminator = lr;
            }
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            let outcome = match a.mode {
                Mode::Conventional => train_conventional_encoder(g, &cfg)?,
                Mode::DomainGuided => {
                    let dir = a.data.as_ref().ok_or_else(|| Error::InvalidArgument("--data is required".into()))?;
                    let data = idinv::workspace::load_image_folder(dir)?;
                    let d = ck.discriminator.as_ref().ok_or_else(|| Error::NotFound("checkpoint has no discriminator".into()))?;
                    let f = ck.features.as_ref().ok_or_else(|| Error::NotFound("checkpoint has no feature extractor".into()))?;
                    train_domain_guided_encoder(g, d, f, &data, &cfg)?
                }
            };
            let logs = a.logs.clone().unwrap_or_else(|| home().join("logs"));
            let name = match a.mode {
                Mode::Conventional => "encoder_conventional.jsonl",
                Mode::DomainGuided => "encoder_domain_guided.jsonl",
            };
            write_log(&logs.join(name), &outcome.log)?;
            ck.encoder = Some(outcome.encoder);
            if let Some(d) = outcome.discriminator {
                ck.discriminator = Some(d);
            }
            let dest = cli.out.clone().unwrap_or(path);
            save_checkpoint(&ck, &dest)?;
            println!("encoder written to {}", dest.display());
        }
        Command::Invert(a) => {
            let l = Loaded::open(&default_checkpoint(&a.inversion.checkpoint))?;
            let x = Image::load_png(&a.image)?;
            let output = jobs::run_invert(&l, &x, &a.inversion.config(seed))?;
            write_job(&out("invert"), "invert", &l.id, output, &["reconstruction"])?;
        }
        Command::Edit(a) => {
            let l = Loaded::open(&default_checkpoint(&a.inversion.checkpoint))?;
            let x = Image::load_png(&a.image)?;
            let output = jobs::run_edit(&l, &x, &a.attribute, a.alpha, a.layers, &a.inversion.config(seed))?;
            write_job(&out("edit"), "edit", &l.id, output, &["edited"])?;
        }
        Command::Interpolate(a) => {
            let l = Loaded::open(&default_checkpoint(&a.inversion.checkpoint))?;
            let (xa, xb) = (Image::load_png(&a.image_a)?, Image::load_png(&a.image_b)?);
            let cfg = a.inversion.config(seed);
            let mut output = jobs::run_interpolate(&l, &xa, &xb, 0.0, &cfg)?;
            let (ca, cb) = (output.inversions[0].code.clone(), output.inversions[1].code.clone());
            output.images = interpolation_frames(&l.generator, &ca, &cb, a.frames)?;
            output.codes = vec![ca, cb];
            output.parameters["frames"] = a.frames.into();
            let names: Vec<String> = (0..a.frames).map(|i| format!("frame{i:03}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            write_job(&out("interpolate"), "interpolate", &l.id, output, &refs)?;
        }
        Command::Mix(a) => {
            let l = Loaded::open(&default_checkpoint(&a.inversion.checkpoint))?;
            let (c, s) = (Image::load_png(&a.content)?, Image::load_png(&a.style)?);
            let output = jobs::run_mix(&l, &c, &s, a.layers, &a.inversion.config(seed))?;
            write_job(&out("mix"), "mix", &l.id, output, &["mixed"])?;
        }
        Command::Diffuse(a) => {
            let l = Loaded::open(&default_checkpoint(&a.inversion.checkpoint))?;
            let (t, c) = (Image::load_png(&a.target)?, Image::load_png(&a.context)?);
            let spec = jobs::diffusion_spec(a.crop, a.paste, a.feather, a.inversion.config(seed));
            let output = jobs::run_diffuse(&l, &t, &c, &spec)?;
            write_job(&out("diffuse"), "diffuse", &l.id, output, &["diffused", "stitched"])?;
        }
        Command::Probe(a) => probe(a, seed, &out("probe"))?,
        Command::Evaluate(a) => {
            let da = idinv::workspace::load_image_folder(&a.a)?;
            let db = idinv::workspace::load_image_folder(&a.b)?;
            let (ia, ib): (Vec<&Image>, Vec<&Image>) = (da.images.iter().collect(), db.images.iter().collect());
            let features = match a.metric {
                Metric::Ffd | Metric::All => match &a.checkpoint {
                    Some(p) => load_checkpoint(p)?.features,
                    None if a.metric == Metric::Ffd => {
                        return Err(Error::InvalidArgument("--checkpoint is required for ffd".into()))
                    }
                    None => None,
                },
                _ => None,
            };
            let swd_cfg = SwdConfig { seed, ..Default::default() };
            let mut report = metric_report(&ia, &ib, features.as_ref(), &swd_cfg)?;
            match a.metric {
                Metric::Mse => (report.swd, report.ffd) = (None, None),
                Metric::Swd => (report.mse, report.ffd) = (None, None),
                Metric::Ffd => (report.mse, report.swd) = (None, None),
                Metric::All => {}
            }
            let dir = out("evaluate");
            write_json(&dir.join("result.json"), &report)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Serve(a) => {
            let l = Loaded::open(&default_checkpoint(&a.checkpoint))?;
            let state = service::AppState::new(l, a.step_cap);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(state, &a.addr))?;
        }
    }
    Ok(())
}

fn probe(a: &ProbeArgs, seed: u64, out: &Path) -> Result<()> {
    let path = default_checkpoint(&a.checkpoint);
    let mut ck = load_checkpoint(&path)?;
    let l = Loaded::from_checkpoint(String::new(), ck.clone())?;
    let boundaries = fit_probe_boundaries(l.models(), &ATTRIBUTES, a.samples, seed)?;
    ck.boundaries = boundaries.clone();
    save_checkpoint(&ck, &path)?;
    write_json(&out.join("boundaries.json"), &boundaries)?;
    let Some(dir) = &a.data else {
        println!("fitted {} boundaries", boundaries.len());
        return Ok(());
    };
    let data = idinv::workspace::load_image_folder(dir)?;
    let labels = data.labels.as_ref().ok_or_else(|| Error::NotFound(format!("{} has no labels.json", dir.display())))?;
    let n = a.count.unwrap_or(data.len()).min(data.len());
    let images: Vec<&Image> = data.images[..n].iter().collect();
    let rows: Vec<Vec<bool>> = labels[..n].iter().map(|l| l.to_vec()).collect();
    let mut inverters = vec![Inverter::in_domain(), Inverter::mse_only(), Inverter::encoder_only()];
    for inv in &mut inverters {
        inv.config.seed = seed;
        if let Some(s) = a.steps {
            if inv.config.steps > 0 {
                inv.config.steps = s;
            }
        }
    }
    let l = Loaded::from_checkpoint(String::new(), ck)?;
    let report = semantic_probe_experiment(l.models(), &inverters, &images, &rows, &boundaries)?;
    for inv in &report.inverters {
        for (curve, attr) in inv.curves.iter().zip(ATTRIBUTES) {
            fs::create_dir_all(out)?;
            fs::write(out.join(format!("pr_{}_{attr}.csv", inv.name)), curve.to_csv())?;
        }
    }
    write_json(&out.join("report.json"), &report)?;
    for inv in &report.inverters {
        println!("{}: AUC {:?}", inv.name, inv.aucs());
    }
    Ok(())
}
