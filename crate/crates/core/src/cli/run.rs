//! The `train`, `synth`, `eval` and `inspect` commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{
    BatchConfig, CommandKind, ImageSource, InitConfig, Method, RunConfig, SynthConfig, TermConfig, TermEntry,
};
use crate::data::{
    cross_net_agreement, evaluate, generate_heldout, generate_shapes, heldout_image, load_manifest,
    load_manifest_with_classes, texture, train, Dataset, Evaluation, TextureKind,
};
use crate::error::{Error, Result};
use crate::net::{small_net_8, RecognitionNet, CHECKPOINT_MAGIC};
use crate::objectives::{CompositeObjective, ObjectiveTerm, StyleSignature, WeightedTerm};
use crate::optimize::{ascend, blackbox_paint, superstimulus_ratio, Snapshot, SuperstimulusRatio, Trajectory};
use crate::paramspace::{init_param, InitMode, Param};
use crate::tensor::Tensor;
use crate::{pnm, seeds};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.sopt";
pub const CORPUS_DIR: &str = "corpus";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub step: usize,
    pub value: f64,
    /// Raw value of each objective term, in objective order.
    pub terms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperstimulusRecord {
    /// Index of the term in the objective.
    pub term: usize,
    pub name: String,
    #[serde(flatten)]
    pub ratio: SuperstimulusRatio,
}

/// One JSON record per run, enough to replay it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub command: CommandKind,
    /// The fully resolved config.
    pub config: RunConfig,
    pub timing: Timing,
    pub initial_value: Option<f64>,
    pub final_value: Option<f64>,
    pub term_names: Vec<String>,
    pub snapshots: Vec<SnapshotRecord>,
    pub superstimulus: Vec<SuperstimulusRecord>,
    /// Emitted files, relative to the output directory.
    pub images: Vec<PathBuf>,
    pub files: Vec<PathBuf>,
    pub metrics: PathBuf,
}

impl RunManifest {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            engine_version: ENGINE_VERSION.to_string(),
            command: cfg.command,
            config: cfg.clone(),
            timing: Timing {
                started_unix_ms: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_millis()),
                seconds: 0.0,
            },
            initial_value: None,
            final_value: None,
            term_names: Vec::new(),
            snapshots: Vec::new(),
            superstimulus: Vec::new(),
            images: Vec::new(),
            files: Vec::new(),
            metrics: PathBuf::from(METRICS_FILE),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_net(path: &Path) -> Result<RecognitionNet> {
    if !path.is_file() {
        return Err(Error::MissingInput(format!("checkpoint {}", path.display())));
    }
    RecognitionNet::load_checkpoint(path)
}

/// Runs a resolved config and returns its manifest, which is also written to
/// the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started = Instant::now();
    create_dir(&cfg.out)?;
    let mut manifest = RunManifest::new(cfg);
    match cfg.command {
        CommandKind::Train => cmd_train(cfg, &mut manifest)?,
        CommandKind::Synth => cmd_synth(cfg, &mut manifest)?,
        CommandKind::Eval => cmd_eval(cfg, &mut manifest)?,
    }
    manifest.timing.seconds = started.elapsed().as_secs_f64();
    write_json(&cfg.out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn training_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.manifest {
        Some(dir) => load_manifest(dir),
        None => generate_shapes(&cfg.data.shapes, cfg.data.train_per_class, cfg.data_seed()),
    }
}

fn heldout_data(cfg: &RunConfig, classes: &[String]) -> Result<Dataset> {
    match &cfg.data.heldout_manifest {
        Some(dir) => load_manifest_with_classes(dir, classes),
        None => {
            let d = generate_heldout(&cfg.data.shapes, cfg.data.heldout_per_class, cfg.data_seed())?;
            if d.classes != classes {
                return Err(Error::ClassSetMismatch(d.classes, classes.to_vec()));
            }
            Ok(d)
        }
    }
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    report: &'a crate::data::TrainReport,
    heldout: &'a Evaluation,
    num_params: usize,
}

fn cmd_train(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let data = training_data(cfg)?;
    let shape = data.image_shape().ok_or(Error::Empty("training data"))?;
    let input: [usize; 3] = shape
        .try_into()
        .map_err(|_| Error::shape("train", format!("images must be CxHxW, got {shape:?}")))?;
    let k = data.classes.len();
    let layers = cfg.architecture.clone().unwrap_or_else(|| small_net_8(k));
    let net = RecognitionNet::build(layers, input, k, seeds::derive(cfg.seed, seeds::NET_INIT))?
        .with_class_names(data.classes.clone())?;
    let (net, report) = train(&net, &data, &cfg.train)?;
    let held = heldout_data(cfg, net.class_names())?;
    let heldout = evaluate(&net, &held)?;
    net.save_checkpoint(cfg.out.join(CHECKPOINT_FILE))?;
    write_json(
        &cfg.out.join(METRICS_FILE),
        &TrainMetrics {
            report: &report,
            heldout: &heldout,
            num_params: net.num_params(),
        },
    )?;
    manifest.files.push(PathBuf::from(CHECKPOINT_FILE));
    Ok(())
}

/// Images substituted into content and style terms for one batch item.
#[derive(Clone, Debug, Default)]
struct Substitution {
    content: Option<Tensor>,
    style: Option<Tensor>,
}

struct Resolver<'a> {
    cfg: &'a RunConfig,
    net: &'a RecognitionNet,
}

impl Resolver<'_> {
    fn image(&self, src: &ImageSource) -> Result<Tensor> {
        let [c, h, w] = self.net.input_shape();
        let img = match src {
            ImageSource::File { path } => {
                if !path.is_file() {
                    return Err(Error::MissingInput(format!("image {}", path.display())));
                }
                pnm::read(path)?
            }
            ImageSource::Shape { class, index } => {
                let names = self.cfg.data.shapes.class_names();
                heldout_image(
                    &self.cfg.data.shapes,
                    class.resolve(&names)?,
                    *index,
                    self.cfg.data_seed(),
                )?
            }
            ImageSource::Texture { kind, seed } => {
                if h != w {
                    return Err(Error::Config(format!("textures are square; net input is {h}x{w}")));
                }
                texture(*kind, c, h, *seed)?
            }
        };
        if img.shape() != [c, h, w] {
            return Err(Error::shape(
                "image source",
                format!("{:?} vs net input {:?}", img.shape(), [c, h, w]),
            ));
        }
        Ok(img)
    }

    fn term(&self, entry: &TermEntry, sub: &Substitution) -> Result<ObjectiveTerm> {
        let net = self.net;
        let stages = net.conv_stages();
        let last = *stages
            .last()
            .ok_or_else(|| Error::Config("net has no conv stage".into()))?;
        let term = match &entry.term {
            TermConfig::ClassProbability { class } => ObjectiveTerm::ClassProbability {
                class: class.resolve(net.class_names())?,
            },
            TermConfig::ClassLogit { class } => ObjectiveTerm::ClassLogit {
                class: class.resolve(net.class_names())?,
            },
            &TermConfig::Neuron { layer, channel, y, x } => ObjectiveTerm::Neuron { layer, channel, y, x },
            &TermConfig::ChannelMean { layer, channel } => ObjectiveTerm::ChannelMean { layer, channel },
            TermConfig::LayerL2 { layer } => ObjectiveTerm::LayerL2 {
                layer: layer.unwrap_or(stages[stages.len() / 2]),
            },
            TermConfig::Content { layer, image } => {
                let img = match &sub.content {
                    Some(t) => t.clone(),
                    None => self.image(image)?,
                };
                ObjectiveTerm::content_from_image(net, &img, layer.unwrap_or(last))?
            }
            TermConfig::Style { layers, weights, image } => {
                let img = match &sub.style {
                    Some(t) => t.clone(),
                    None => self.image(image)?,
                };
                let layers = layers.clone().unwrap_or_else(|| stages.clone());
                let mut signature = StyleSignature::from_image(net, &img, &layers)?;
                if let Some(w) = weights {
                    signature = signature.with_weights(w)?;
                }
                ObjectiveTerm::StyleLoss { signature }
            }
            TermConfig::TotalVariation => ObjectiveTerm::TotalVariation,
            TermConfig::L2Distance { image } => ObjectiveTerm::L2Distance {
                reference: self.image(image)?,
            },
        };
        Ok(term)
    }

    fn objective(&self, synth: &SynthConfig, sub: &Substitution) -> Result<CompositeObjective> {
        let terms = synth
            .objective
            .iter()
            .map(|e| {
                Ok(WeightedTerm {
                    term: self.term(e, sub)?,
                    weight: e.weight,
                    direction: e.direction(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let obj = CompositeObjective::new(terms)?;
        obj.validate(self.net)?;
        Ok(obj)
    }

    fn content_image(&self, synth: &SynthConfig, sub: &Substitution) -> Result<Tensor> {
        if let Some(t) = &sub.content {
            return Ok(t.clone());
        }
        let src = synth
            .objective
            .iter()
            .find_map(|e| match &e.term {
                TermConfig::Content { image, .. } => Some(image),
                _ => None,
            })
            .ok_or_else(|| Error::Config("no content term".into()))?;
        self.image(src)
    }

    fn init(&self, synth: &SynthConfig, sub: &Substitution) -> Result<Param> {
        let seed = self.cfg.seed;
        match &synth.init {
            InitConfig::Noise => init_param(&synth.param, InitMode::Noise, seed),
            InitConfig::Content => {
                let img = self.content_image(synth, sub)?;
                init_param(&synth.param, InitMode::FromImage(&img), seed)
            }
            InitConfig::Image { image } => {
                let img = self.image(image)?;
                init_param(&synth.param, InitMode::FromImage(&img), seed)
            }
        }
    }

    fn optimize(&self, synth: &SynthConfig, obj: &CompositeObjective, init: &Param) -> Result<Trajectory> {
        match synth.method {
            Method::Ascent => ascend(obj, init, self.net, &synth.ascent),
            Method::Paint => blackbox_paint(obj, init, self.net, &synth.paint),
        }
    }
}

fn record(s: &Snapshot) -> SnapshotRecord {
    SnapshotRecord {
        step: s.step,
        value: s.value,
        terms: s.terms.clone(),
    }
}

#[derive(Serialize)]
struct SynthMetrics<'a> {
    term_names: &'a [String],
    snapshots: &'a [SnapshotRecord],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    paint_log: &'a [crate::optimize::PaintStep],
}

fn cmd_synth(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let synth = cfg.synth.as_ref().expect("validated");
    let net = load_net(cfg.checkpoint.as_deref().expect("validated"))?;
    let resolver = Resolver { cfg, net: &net };
    if let Some(batch) = &synth.batch {
        return synth_batch(&resolver, synth, batch, manifest);
    }
    let none = Substitution::default();
    let obj = resolver.objective(synth, &none)?;
    let init = resolver.init(synth, &none)?;
    manifest.term_names = obj.term_names().iter().map(|s| s.to_string()).collect();
    let traj = resolver.optimize(synth, &obj, &init)?;

    let out = &cfg.out;
    let ext = pnm::extension(traj.artifact.image.shape()[0]);
    for s in &traj.snapshots {
        let stem = format!("snap_{:05}", s.step);
        pnm::write(out.join(format!("{stem}.{ext}")), &s.image)?;
        write_json(
            &out.join(format!("{stem}.json")),
            &json!({"step": s.step, "value": s.value, "terms": s.terms}),
        )?;
        manifest.images.push(PathBuf::from(format!("{stem}.{ext}")));
    }
    let final_name = PathBuf::from(format!("final.{ext}"));
    pnm::write(out.join(&final_name), &traj.artifact.image)?;
    manifest.images.push(final_name);
    if let Some((name, contents)) = traj.artifact.medium.file() {
        fs::write(out.join(name), contents).map_err(|e| Error::io(out.join(name), e))?;
        manifest.files.push(PathBuf::from(name));
    }

    manifest.snapshots = traj.snapshots.iter().map(record).collect();
    manifest.initial_value = Some(traj.initial_value());
    manifest.final_value = Some(obj.value(&traj.artifact.image, &net)?.0);
    if let Some(ss) = &synth.superstimulus {
        let k = net.num_classes();
        let per_class = ss.images.div_ceil(k);
        let all = generate_shapes(&cfg.data.shapes, per_class, cfg.data_seed())?;
        let idx: Vec<usize> = (0..ss.images).collect();
        let dataset = all.subset(&idx);
        for (i, wt) in obj.terms().iter().enumerate() {
            if wt.term.is_activation() {
                manifest.superstimulus.push(SuperstimulusRecord {
                    term: i,
                    name: wt.term.name().to_string(),
                    ratio: superstimulus_ratio(&net, &wt.term, &dataset, &traj.artifact.image)?,
                });
            }
        }
    }
    write_json(
        &out.join(METRICS_FILE),
        &SynthMetrics {
            term_names: &manifest.term_names,
            snapshots: &manifest.snapshots,
            paint_log: &traj.paint_log,
        },
    )?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BatchItem {
    file: String,
    label: String,
    content_index: usize,
    style: Option<TextureKind>,
    predicted: String,
    initial_value: f64,
    final_value: f64,
}

fn synth_batch(
    resolver: &Resolver<'_>,
    synth: &SynthConfig,
    batch: &BatchConfig,
    manifest: &mut RunManifest,
) -> Result<()> {
    let cfg = resolver.cfg;
    let net = resolver.net;
    let names = net.class_names();
    let k = net.num_classes();
    let [c, h, _] = net.input_shape();
    let dir = cfg.out.join(CORPUS_DIR);
    create_dir(&dir)?;
    let styled = synth
        .objective
        .iter()
        .any(|e| matches!(e.term, TermConfig::Style { .. }));
    let styles: Vec<Option<TextureKind>> = if styled {
        batch.styles.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let ext = pnm::extension(c);
    let mut items = Vec::new();
    for i in 0..batch.contents {
        let (label, index) = (i % k, i / k);
        let content = heldout_image(&cfg.data.shapes, label, index, cfg.data_seed())?;
        for style in &styles {
            let sub = Substitution {
                content: Some(content.clone()),
                style: match style {
                    Some(kind) => Some(texture(*kind, c, h, batch.texture_seed + i as u64)?),
                    None => None,
                },
            };
            let obj = resolver.objective(synth, &sub)?;
            let init = resolver.init(synth, &sub)?;
            let traj = resolver.optimize(synth, &obj, &init)?;
            let file = match style {
                Some(kind) => format!("{i:04}_{}.{ext}", kind.name()),
                None => format!("{i:04}.{ext}"),
            };
            pnm::write(dir.join(&file), &traj.artifact.image)?;
            let predicted = net.predict(&traj.artifact.image)?[0];
            manifest.images.push(Path::new(CORPUS_DIR).join(&file));
            if manifest.term_names.is_empty() {
                manifest.term_names = obj.term_names().iter().map(|s| s.to_string()).collect();
            }
            items.push(BatchItem {
                file,
                label: names[label].clone(),
                content_index: index,
                style: *style,
                predicted: names[predicted].clone(),
                initial_value: traj.initial_value(),
                final_value: obj.value(&traj.artifact.image, net)?.0,
            });
        }
    }
    let mut csv = String::from("filename,label\n");
    for it in &items {
        csv.push_str(&format!("{},{}\n", it.file, it.label));
    }
    let path = dir.join(crate::data::MANIFEST_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    manifest
        .files
        .push(Path::new(CORPUS_DIR).join(crate::data::MANIFEST_FILE));
    let kept = items.iter().filter(|it| it.label == it.predicted).count();
    write_json(
        &cfg.out.join(METRICS_FILE),
        &json!({
            "items": items,
            "retention": kept as f64 / items.len() as f64,
        }),
    )?;
    Ok(())
}

/// Classification, retention and cross-net report of `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub accuracy_b: Option<f64>,
    /// Held-out top-1 agreement of the two nets.
    pub agreement: Option<f64>,
    /// Corpus content-label retention on the first net.
    pub retention: Option<f64>,
    pub retention_b: Option<f64>,
    /// Corpus top-1 agreement of the two nets.
    pub corpus_agreement: Option<f64>,
}

fn cmd_eval(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let a = load_net(cfg.checkpoint.as_deref().expect("validated"))?;
    let b = cfg.checkpoint_b.as_deref().map(load_net).transpose()?;
    let held = heldout_data(cfg, a.class_names())?;
    let ev = evaluate(&a, &held)?;
    let held_images: Vec<&Tensor> = held.images.iter().map(|im| &im.image).collect();
    let mut report = EvalReport {
        accuracy: ev.accuracy,
        confusion: ev.confusion,
        accuracy_b: None,
        agreement: None,
        retention: None,
        retention_b: None,
        corpus_agreement: None,
    };
    if let Some(b) = &b {
        report.accuracy_b = Some(evaluate(b, &held)?.accuracy);
        report.agreement = Some(cross_net_agreement(&a, b, &held_images)?.rate);
    }
    if let Some(dir) = &cfg.corpus {
        if !dir.join(crate::data::MANIFEST_FILE).is_file() {
            return Err(Error::MissingInput(format!("corpus {}", dir.display())));
        }
        let corpus = load_manifest_with_classes(dir, a.class_names())?;
        report.retention = Some(evaluate(&a, &corpus)?.accuracy);
        if let Some(b) = &b {
            let images: Vec<&Tensor> = corpus.images.iter().map(|im| &im.image).collect();
            report.retention_b = Some(evaluate(b, &corpus)?.accuracy);
            report.corpus_agreement = Some(cross_net_agreement(&a, b, &images)?.rate);
        }
    }
    write_json(&cfg.out.join(METRICS_FILE), &report)?;
    manifest.files.push(PathBuf::from(METRICS_FILE));
    Ok(())
}

/// A short human-readable summary of a checkpoint or a run manifest.
pub fn inspect(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    if bytes.starts_with(&CHECKPOINT_MAGIC) {
        let net = RecognitionNet::from_checkpoint_bytes(&bytes)?;
        let mut s = format!(
            "checkpoint {}\ninput {:?}\nclasses {}\nparameters {}\n",
            path.display(),
            net.input_shape(),
            net.class_names().join(","),
            net.num_params()
        );
        for (i, (layer, shape)) in net.layers().iter().zip(net.layer_shapes()).enumerate() {
            s.push_str(&format!("  {i:>2} {layer:?} -> {shape:?}\n"));
        }
        return Ok(s);
    }
    let m: RunManifest = serde_json::from_slice(&bytes).map_err(|e| {
        Error::Config(format!(
            "{} is neither a checkpoint nor a manifest: {e}",
            path.display()
        ))
    })?;
    let mut s = format!(
        "manifest {}\ncommand {}\nengine {}\nseed {}\nseconds {:.2}\n",
        path.display(),
        m.command.name(),
        m.engine_version,
        m.config.seed,
        m.timing.seconds
    );
    if let Some(p) = m.config.synth.as_ref().map(|s| s.preset) {
        s.push_str(&format!("preset {}\n", p.name()));
    }
    if let (Some(a), Some(b)) = (m.initial_value, m.final_value) {
        s.push_str(&format!("objective {a:.6} -> {b:.6}\n"));
    }
    if !m.term_names.is_empty() {
        s.push_str(&format!("terms {}\n", m.term_names.join(",")));
    }
    for r in &m.superstimulus {
        match r.ratio.ratio {
            Some(x) => s.push_str(&format!("superstimulus {} {x:.4}\n", r.name)),
            None => s.push_str(&format!("superstimulus {} undefined\n", r.name)),
        }
    }
    s.push_str(&format!("images {}\n", m.images.len()));
    Ok(s)
}
