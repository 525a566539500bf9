//! Run configuration: JSON file, preset defaults and `--set` overrides,
//! resolved into one validated [`RunConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::data::{ShapesSpec, TextureKind, TrainConfig};
use crate::error::{Error, Result};
use crate::net::LayerSpec;
use crate::objectives::Direction;
use crate::optimize::{AscentConfig, PaintConfig};
use crate::paramspace::ParamSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Train,
    Synth,
    Eval,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Train => "train",
            CommandKind::Synth => "synth",
            CommandKind::Eval => "eval",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fv,
    Dream,
    Style,
    So,
    Medium,
    Paint,
    /// No defaults: the objective and parameterization must be given.
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Fv,
        Preset::Dream,
        Preset::Style,
        Preset::So,
        Preset::Medium,
        Preset::Paint,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fv => "fv",
            Preset::Dream => "dream",
            Preset::Style => "style",
            Preset::So => "so",
            Preset::Medium => "medium",
            Preset::Paint => "paint",
            Preset::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

/// A class given by name or by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

impl ClassRef {
    pub fn resolve(&self, classes: &[String]) -> Result<usize> {
        match self {
            ClassRef::Index(i) if *i < classes.len() => Ok(*i),
            ClassRef::Index(i) => Err(Error::Config(format!("class index {i} with {} classes", classes.len()))),
            ClassRef::Name(n) => classes
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Config(format!("unknown class {n:?}; classes are {classes:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSource {
    /// A P5/P6 file.
    File {
        path: PathBuf,
    },
    /// Held-out shape image `index` of `class`, from the data section's spec
    /// and seed.
    Shape {
        class: ClassRef,
        index: usize,
    },
    Texture {
        kind: TextureKind,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermConfig {
    ClassProbability {
        class: ClassRef,
    },
    ClassLogit {
        class: ClassRef,
    },
    Neuron {
        layer: usize,
        channel: usize,
        y: usize,
        x: usize,
    },
    ChannelMean {
        layer: usize,
        channel: usize,
    },
    /// Layer defaults to the middle conv stage.
    LayerL2 {
        #[serde(default)]
        layer: Option<usize>,
    },
    /// Layer defaults to the last conv stage.
    Content {
        #[serde(default)]
        layer: Option<usize>,
        image: ImageSource,
    },
    /// Layers default to every conv stage, weights to equal shares.
    Style {
        #[serde(default)]
        layers: Option<Vec<usize>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        image: ImageSource,
    },
    TotalVariation,
    L2Distance {
        image: ImageSource,
    },
}

impl TermConfig {
    /// Activation terms are maximized by default, losses minimized.
    pub fn default_direction(&self) -> Direction {
        match self {
            TermConfig::ClassProbability { .. }
            | TermConfig::ClassLogit { .. }
            | TermConfig::Neuron { .. }
            | TermConfig::ChannelMean { .. }
            | TermConfig::LayerL2 { .. } => Direction::Maximize,
            _ => Direction::Minimize,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermEntry {
    pub term: TermConfig,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub direction: Option<Direction>,
}

impl TermEntry {
    pub fn direction(&self) -> Direction {
        self.direction.unwrap_or_else(|| self.term.default_direction())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    #[default]
    Noise,
    /// The image of the first content term.
    Content,
    Image {
        image: ImageSource,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Ascent,
    Paint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperstimulusConfig {
    /// Number of training images the maximum is taken over.
    pub images: usize,
}

/// Runs the objective once per held-out content image and style source,
/// writing a labelled corpus instead of a single artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    /// Held-out images, taken round-robin over classes.
    pub contents: usize,
    /// Style sources substituted into every style term; ignored without one.
    #[serde(default = "all_textures")]
    pub styles: Vec<TextureKind>,
    #[serde(default)]
    pub texture_seed: u64,
}

fn all_textures() -> Vec<TextureKind> {
    TextureKind::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: Preset,
    #[serde(default)]
    pub method: Method,
    pub objective: Vec<TermEntry>,
    pub param: ParamSpec,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub ascent: AscentConfig,
    #[serde(default)]
    pub paint: PaintConfig,
    #[serde(default)]
    pub superstimulus: Option<SuperstimulusConfig>,
    #[serde(default)]
    pub batch: Option<BatchConfig>,
}

impl SynthConfig {
    pub fn has_content_term(&self) -> bool {
        self.objective
            .iter()
            .any(|t| matches!(t.term, TermConfig::Content { .. }))
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.is_empty() {
            return Err(Error::Config("synth.objective must list at least one term".into()));
        }
        if let Some(bad) = self
            .objective
            .iter()
            .find(|t| !(t.weight.is_finite() && t.weight >= 0.0))
        {
            return Err(Error::Config(format!(
                "term weight {} must be finite and non-negative",
                bad.weight
            )));
        }
        self.param.validate()?;
        match self.method {
            Method::Ascent => self.ascent.validate()?,
            Method::Paint => {
                self.paint.validate()?;
                if !matches!(self.param, ParamSpec::Strokes { .. }) {
                    return Err(Error::Config("method paint needs a strokes parameterization".into()));
                }
            }
        }
        let needs_content = self.init == InitConfig::Content || self.batch.is_some();
        if needs_content && !self.has_content_term() {
            return Err(Error::Config(
                "init from content and batch runs need a content term".into(),
            ));
        }
        if let Some(b) = &self.batch {
            if b.contents == 0 {
                return Err(Error::Config("synth.batch.contents must be at least 1".into()));
            }
            if b.styles.is_empty() {
                return Err(Error::Config("synth.batch.styles must not be empty".into()));
            }
        }
        if let Some(s) = &self.superstimulus {
            if s.images == 0 {
                return Err(Error::Config("synth.superstimulus.images must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub shapes: ShapesSpec,
    pub train_per_class: usize,
    pub heldout_per_class: usize,
    /// Seed of the shape streams; defaults to the run seed.
    pub seed: Option<u64>,
    /// Training corpus directory (`manifest.csv`) instead of shapes.
    pub manifest: Option<PathBuf>,
    /// Held-out corpus directory instead of held-out shapes.
    pub heldout_manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            shapes: ShapesSpec::default(),
            train_per_class: 500,
            heldout_per_class: 100,
            seed: None,
            manifest: None,
            heldout_manifest: None,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Second net for the cross-net checks of `eval`.
    #[serde(default)]
    pub checkpoint_b: Option<PathBuf>,
    /// Labelled corpus directory evaluated for content retention.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Layer list for `train`; defaults to the small three-stage net.
    #[serde(default)]
    pub architecture: Option<Vec<LayerSpec>>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

impl RunConfig {
    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.shapes.validate()?;
        match self.command {
            CommandKind::Train => {
                self.train.validate()?;
                if self.data.manifest.is_none() && self.data.train_per_class == 0 {
                    return Err(Error::Config("data.train_per_class must be at least 1".into()));
                }
            }
            CommandKind::Synth => {
                if self.checkpoint.is_none() {
                    return Err(Error::Config("synth needs a checkpoint".into()));
                }
                self.synth
                    .as_ref()
                    .ok_or_else(|| Error::Config("synth needs a synth section".into()))?
                    .validate()?;
            }
            CommandKind::Eval => {
                if self.checkpoint.is_none() {
                    return Err(Error::Config("eval needs a checkpoint".into()));
                }
                if self.data.heldout_manifest.is_none() && self.data.heldout_per_class == 0 {
                    return Err(Error::Config("data.heldout_per_class must be at least 1".into()));
                }
            }
        }
        if self.command != CommandKind::Synth && self.synth.is_some() {
            return Err(Error::Config(format!("synth section given to {}", self.command.name())));
        }
        Ok(())
    }
}

/// Preset defaults for the `synth` section. Image dimensions follow the
/// data section's shapes.
pub fn preset_defaults(preset: Preset, shapes: &ShapesSpec) -> Value {
    let (c, s) = (shapes.color.channels(), shapes.size);
    let first = shapes.classes.first().map_or("circle", |k| k.name());
    let content = json!({"source": "shape", "class": first, "index": 0});
    let style = json!({"source": "texture", "kind": "stripes", "seed": 0});
    let pixel = json!({"kind": "pixel", "height": s, "width": s, "channels": c});
    let base = AscentConfig::default();
    let ascent = |steps: usize, step_size: f64, jitter: usize| {
        let mut a = serde_json::to_value(AscentConfig {
            steps,
            step_size,
            jitter,
            ..base.clone()
        })
        .expect("serializable");
        a.as_object_mut().expect("object").remove("seed");
        a
    };
    match preset {
        Preset::Fv => json!({
            "preset": "fv",
            "objective": [
                {"term": {"kind": "class_logit", "class": first}, "weight": 1.0, "direction": "maximize"},
                {"term": {"kind": "total_variation"}, "weight": 0.1, "direction": "minimize"},
            ],
            "param": {"kind": "frequency", "height": s, "width": s, "channels": c},
            "init": {"from": "noise"},
            "ascent": ascent(512, base.step_size, base.jitter),
            "superstimulus": {"images": 1000},
        }),
        Preset::Dream => json!({
            "preset": "dream",
            "objective": [{"term": {"kind": "layer_l2"}, "weight": 1.0, "direction": "maximize"}],
            "param": pixel,
            "init": {"from": "image", "image": content},
            "ascent": ascent(256, base.step_size, base.jitter),
        }),
        Preset::Style => json!({
            "preset": "style",
            "objective": [
                {"term": {"kind": "content", "image": content}, "weight": 1.0, "direction": "minimize"},
                {"term": {"kind": "style", "image": style}, "weight": 100.0, "direction": "minimize"},
            ],
            "param": pixel,
            "init": {"from": "content"},
            "ascent": ascent(200, base.step_size, 0),
        }),
        Preset::So => json!({
            "preset": "so",
            "objective": [
                {"term": {"kind": "layer_l2"}, "weight": 0.1, "direction": "maximize"},
                {"term": {"kind": "style", "image": style}, "weight": 100.0, "direction": "minimize"},
                {"term": {"kind": "content", "image": content}, "weight": 1.0, "direction": "minimize"},
            ],
            "param": pixel,
            "init": {"from": "content"},
            "ascent": ascent(256, base.step_size, 0),
        }),
        Preset::Medium => json!({
            "preset": "medium",
            "objective": [{"term": {"kind": "content", "image": content}, "weight": 1.0, "direction": "minimize"}],
            "param": {
                "kind": "halftone",
                "grid_height": s / 2,
                "grid_width": s / 2,
                "cell_size": 2,
                "temperature": 1.0,
                "channels": c,
            },
            "init": {"from": "content"},
            "ascent": ascent(1000, 0.02, 0),
        }),
        Preset::Paint => json!({
            "preset": "paint",
            "method": "paint",
            "objective": [{"term": {"kind": "class_logit", "class": first}, "weight": 1.0, "direction": "maximize"}],
            "param": {"kind": "strokes", "height": s, "width": s, "channels": c, "count": 0, "primitive": "mixed"},
            "init": {"from": "noise"},
        }),
        Preset::Custom => json!({"preset": "custom"}),
    }
}

/// Keys that select an enum variant; objects whose tags differ are replaced
/// rather than merged.
const TAGS: [&str; 5] = ["kind", "source", "from", "norm", "term"];

fn same_variant(b: &Map<String, Value>, t: &Map<String, Value>) -> bool {
    TAGS.iter()
        .all(|k| !matches!((b.get(*k), t.get(*k)), (Some(x), Some(y)) if x.is_string() && x != y))
}

/// Recursively overlays `top` onto `base`; objects merge key by key unless
/// they are different enum variants, everything else (arrays included) is
/// replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if same_variant(b, &t) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets a dotted path (`synth.ascent.steps`, `synth.objective.0.weight`).
/// The value is parsed as JSON and falls back to a plain string. Missing
/// object keys are created; array indices must exist.
pub fn set_path(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed key {path:?}")));
    }
    let mut cur = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert(key.to_string(), value);
                    return Ok(());
                }
                m.entry(key.to_string()).or_insert(Value::Null)
            }
            Value::Array(a) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| Error::Config(format!("{path}: {key:?} indexes an array")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("{path}: index {idx} beyond length {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("{path}: {key:?} is below a scalar"))),
        };
    }
    unreachable!("loop returns on the last key")
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
    /// `(dotted key, value)` pairs, applied in order.
    pub sets: Vec<(String, String)>,
}

/// Reads a config file. A run manifest is accepted too; its config echo is
/// used, which replays the run.
pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    match value {
        Value::Object(mut m) if m.contains_key("engine_version") && m.contains_key("config") => {
            Ok(m.remove("config").expect("checked"))
        }
        v @ Value::Object(_) => Ok(v),
        _ => Err(Error::Config(format!(
            "{}: top level must be an object",
            path.display()
        ))),
    }
}

fn get<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(v, |cur, k| cur.get(k))
}

/// Layers preset defaults, the file, flags and `--set` pairs into a
/// validated config for `command`.
pub fn resolve(command: CommandKind, file: Option<Value>, overrides: &Overrides) -> Result<RunConfig> {
    let mut user = file.unwrap_or_else(|| Value::Object(Map::new()));
    match user.get("command") {
        None => {
            user["command"] = json!(command.name());
        }
        Some(v) if v == command.name() => {}
        Some(v) => {
            return Err(Error::Config(format!(
                "config is for command {v}, not {}",
                command.name()
            )));
        }
    }
    if let Some(seed) = overrides.seed {
        user["seed"] = json!(seed);
    }
    if let Some(out) = &overrides.out {
        user["out"] = json!(out);
    }
    if let Some(p) = &overrides.preset {
        if command != CommandKind::Synth {
            return Err(Error::Config("--preset applies to synth only".into()));
        }
        Preset::parse(p)?;
        set_path(&mut user, "synth.preset", &json!(p).to_string())?;
    }
    // Sets apply after the preset defaults so they can reach into preset
    // lists; a copy with the sets applied decides the preset and image size.
    let mut probe = user.clone();
    for (k, v) in &overrides.sets {
        set_path(&mut probe, k, v)?;
    }

    let seed = match probe.get("seed") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::Config(format!("seed must be a non-negative integer, got {v}")))?,
    };
    if command == CommandKind::Synth {
        let preset = match get(&probe, &["synth", "preset"]) {
            None => Preset::Fv,
            Some(Value::String(s)) => Preset::parse(s)?,
            Some(v) => return Err(Error::Config(format!("synth.preset must be a string, got {v}"))),
        };
        let shapes: ShapesSpec = match get(&probe, &["data", "shapes"]) {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("data.shapes: {e}")))?,
            None => ShapesSpec::default(),
        };
        let mut synth = preset_defaults(preset, &shapes);
        if let Some(v) = user.get("synth") {
            merge(&mut synth, v.clone());
        }
        user["synth"] = synth;
    }
    for (k, v) in &overrides.sets {
        set_path(&mut user, k, v)?;
    }
    if let Some(Value::Object(synth)) = user.get_mut("synth").filter(|_| command == CommandKind::Synth) {
        for section in ["ascent", "paint"] {
            if let Value::Object(m) = synth.entry(section).or_insert_with(|| Value::Object(Map::new())) {
                m.entry("seed").or_insert(json!(seed));
            }
        }
    }
    if command == CommandKind::Train {
        if let Value::Object(m) = user
            .as_object_mut()
            .expect("object")
            .entry("train")
            .or_insert(json!({}))
        {
            m.entry("seed").or_insert(json!(seed));
        }
    }
    let cfg: RunConfig = serde_json::from_value(user).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
