//! Search procedures over parameterizations: gradient ascent (with jitter,
//! projection and annealing), greedy blackbox stroke painting, and the
//! superstimulus measurement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::RecognitionNet;
use crate::objectives::{CompositeObjective, Direction, ObjectiveTerm};
use crate::paramspace::{
    decode, decode_on, encode_image, encode_stroke, finalize, max_size, paint_over, stroke_len, Finalized,
    MediumDescription, Param, ParamSpec, Primitive, Stroke, TemperatureSchedule,
};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "norm", rename_all = "snake_case", deny_unknown_fields)]
pub enum Projection {
    #[default]
    None,
    L2 {
        epsilon: f64,
    },
    Linf {
        epsilon: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Divide the gradient by its L2 norm before stepping.
    pub normalize_gradient: bool,
    /// Maximum circular shift in pixels; 0 disables jitter.
    pub jitter: usize,
    pub projection: Projection,
    pub temperature: TemperatureSchedule,
    pub seed: u64,
    /// Steps between snapshots; the initial and final states are always kept.
    pub snapshot_every: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            steps: 256,
            step_size: 0.05,
            normalize_gradient: true,
            jitter: 2,
            projection: Projection::None,
            temperature: TemperatureSchedule::default(),
            seed: 0,
            snapshot_every: 64,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size {} must be positive", self.step_size)));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be at least 1".into()));
        }
        match self.projection {
            Projection::L2 { epsilon } | Projection::Linf { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                return Err(Error::Config(format!("projection epsilon {epsilon} must be positive")));
            }
            _ => {}
        }
        self.temperature.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Number of updates applied.
    pub step: usize,
    pub value: f64,
    /// Raw value of each objective term.
    pub terms: Vec<f64>,
    /// `C x H x W`.
    pub image: Tensor,
}

/// One step of the blackbox painter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaintStep {
    pub step: usize,
    pub accepted: bool,
    pub best_proposal: f64,
    /// Objective of the canvas after the step.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub final_param: Param,
    pub artifact: Finalized,
    /// Painter decisions; empty for gradient ascent.
    pub paint_log: Vec<PaintStep>,
}

impl Trajectory {
    pub fn initial_value(&self) -> f64 {
        self.snapshots.first().map_or(f64::NAN, |s| s.value)
    }

    pub fn final_value(&self) -> f64 {
        self.snapshots.last().map_or(f64::NAN, |s| s.value)
    }

    /// Objective values at the start and after every accepted paint step.
    pub fn accepted_values(&self) -> Vec<f64> {
        std::iter::once(self.initial_value())
            .chain(self.paint_log.iter().filter(|p| p.accepted).map(|p| p.value))
            .collect()
    }
}

/// Moves `image` back within `epsilon` of `init` in the given norm, then
/// clamps to `[0, 1]`.
pub fn project(image: &Tensor, init: &Tensor, mode: Projection) -> Result<Tensor> {
    if image.shape() != init.shape() {
        return Err(Error::shape(
            "project",
            format!("{:?} vs {:?}", image.shape(), init.shape()),
        ));
    }
    let dev: Vec<f64> = image
        .data()
        .iter()
        .zip(init.data())
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let dev: Vec<f64> = match mode {
        Projection::None => dev,
        Projection::L2 { epsilon } => {
            let norm = dev.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm > epsilon {
                dev.iter().map(|d| d * epsilon / norm).collect()
            } else {
                dev
            }
        }
        Projection::Linf { epsilon } => dev.iter().map(|d| d.clamp(-epsilon, epsilon)).collect(),
    };
    let out = init
        .data()
        .iter()
        .zip(&dev)
        .map(|(&b, d)| round_toward((b as f64 + d).clamp(0.0, 1.0), b))
        .collect();
    Tensor::new(image.shape().to_vec(), out)
}

/// `x` as f32, rounded toward `anchor` so `|result - anchor| <= |x - anchor|`.
fn round_toward(x: f64, anchor: f32) -> f32 {
    let r = x as f32;
    if (r as f64 - anchor as f64).abs() <= (x - anchor as f64).abs() {
        r
    } else if r > anchor {
        r.next_down()
    } else {
        r.next_up()
    }
}

/// Deviation of `image` from `init` in the projection's norm.
pub fn deviation(image: &Tensor, init: &Tensor, mode: Projection) -> f64 {
    let d = image.data().iter().zip(init.data()).map(|(&a, &b)| a as f64 - b as f64);
    match mode {
        Projection::Linf { .. } => d.fold(0.0, |m, v| m.max(v.abs())),
        _ => d.map(|v| v * v).sum::<f64>().sqrt(),
    }
}

fn numerical(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NumericalFailure { step },
        other => other,
    }
}

fn snapshot(obj: &CompositeObjective, net: &RecognitionNet, step: usize, image: Tensor) -> Result<Snapshot> {
    let (value, terms) = obj.value(&image, net).map_err(numerical(step))?;
    if !value.is_finite() {
        return Err(Error::NumericalFailure { step });
    }
    Ok(Snapshot {
        step,
        value,
        terms,
        image,
    })
}

fn check_consistent(obj: &CompositeObjective, spec: &ParamSpec, net: &RecognitionNet) -> Result<()> {
    if spec.image_shape() != net.input_shape() {
        return Err(Error::shape(
            "ascend",
            format!(
                "parameterization image {:?} vs net input {:?}",
                spec.image_shape(),
                net.input_shape()
            ),
        ));
    }
    obj.validate(net)
}

/// Gradient ascent on `param` under `obj`.
///
/// Each step: set the annealed temperature, decode, optionally shift the image
/// circularly by a random offset, back-propagate the objective to the
/// parameters, step along the (optionally L2-normalized) gradient, and
/// optionally project the decoded image back near the initial one. With
/// projection the projected image is re-encoded into the parameters and is
/// itself the snapshot and artifact image.
pub fn ascend(obj: &CompositeObjective, param: &Param, net: &RecognitionNet, cfg: &AscentConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_consistent(obj, &param.spec, net)?;
    let projecting = cfg.projection != Projection::None;
    if projecting && !matches!(param.spec, ParamSpec::Pixel { .. } | ParamSpec::Frequency { .. }) {
        return Err(Error::Unsupported(format!(
            "projection on a {} parameterization",
            param.spec.kind()
        )));
    }
    let [c, h, w] = param.spec.image_shape();
    let t0 = param.spec.initial_temperature();
    let mut param = param.clone().with_temperature(cfg.temperature.at(t0, 0));
    let init_image = decode(&param)?;
    let mut projected: Option<Tensor> = projecting.then(|| init_image.clone());
    let mut jitter_rng = seeds::rng(cfg.seed, seeds::JITTER);
    let mut snapshots = Vec::new();

    for step in 0..cfg.steps {
        param.temperature = cfg.temperature.at(t0, step);
        if step % cfg.snapshot_every == 0 {
            let image = match &projected {
                Some(x) => x.clone(),
                None => decode(&param)?,
            };
            snapshots.push(snapshot(obj, net, step, image)?);
        }

        let mut tape = Tape::<f32>::new();
        let decoded = decode_on(&mut tape, &param, true).map_err(numerical(step))?;
        let mut image = decoded.image;
        if cfg.jitter > 0 {
            let j = cfg.jitter as isize;
            let (dy, dx) = (jitter_rng.gen_range(-j..=j), jitter_rng.gen_range(-j..=j));
            image = tape.roll(image, dy, dx)?;
        }
        let rec = obj.record(&mut tape, image, net).map_err(numerical(step))?;
        tape.backward(rec.total).map_err(numerical(step))?;
        let grad = decoded.gradient(&tape);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure { step });
        }
        let scale = if cfg.normalize_gradient {
            let norm = grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                cfg.step_size / norm
            } else {
                0.0
            }
        } else {
            cfg.step_size
        };
        for (v, g) in param.values.iter_mut().zip(&grad) {
            *v += (scale * *g as f64) as f32;
        }
        if param.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { step });
        }
        if projecting {
            let x = project(&decode(&param)?, &init_image, cfg.projection)?;
            param.values = encode_image(&param.spec, &x)?;
            projected = Some(x);
        }
    }

    param.temperature = cfg.temperature.at(t0, cfg.steps);
    let artifact = match projected {
        Some(image) => Finalized {
            image,
            medium: MediumDescription::Raster,
            param: param.clone(),
        },
        None => finalize(&param)?,
    };
    let last = match &artifact.medium {
        MediumDescription::Raster => artifact.image.clone(),
        _ => decode(&param)?,
    };
    debug_assert_eq!(last.shape(), &[c, h, w]);
    snapshots.push(snapshot(obj, net, cfg.steps, last)?);
    Ok(Trajectory {
        snapshots,
        final_param: param,
        artifact,
        paint_log: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaintConfig {
    /// Number of serial steps (each may add one stroke).
    pub budget: usize,
    pub proposals: usize,
    pub seed: u64,
    pub snapshot_every: usize,
}

impl Default for PaintConfig {
    fn default() -> Self {
        Self {
            budget: 100,
            proposals: 32,
            seed: 0,
            snapshot_every: 10,
        }
    }
}

impl PaintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.proposals == 0 || self.snapshot_every == 0 {
            return Err(Error::Config(
                "budget, proposals and snapshot_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A random stroke: uniform position, size, orientation and colour.
pub fn random_stroke(rng: &mut impl Rng, spec: &ParamSpec) -> Result<Vec<f32>> {
    let ParamSpec::Strokes {
        height,
        width,
        channels,
        primitive,
        ..
    } = spec
    else {
        return Err(Error::Unsupported(format!("strokes on {}", spec.kind())));
    };
    let (h, w) = (*height, *width);
    let segment = match primitive {
        Primitive::Disc => false,
        Primitive::Segment => true,
        Primitive::Mixed => rng.gen_bool(0.5),
    };
    let stroke = Stroke {
        segment,
        x: w as f64 * rng.gen_range(0.02..0.98),
        y: h as f64 * rng.gen_range(0.02..0.98),
        size: max_size(h, w) * rng.gen_range(0.05..0.95),
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        color: (0..*channels).map(|_| rng.gen_range(0.02..0.98)).collect(),
        opacity: rng.gen_range(0.3..0.95),
    };
    Ok(encode_stroke(&stroke, h, w))
}

fn canvas_of(param: &Param) -> Vec<f64> {
    let [c, h, w] = param.spec.image_shape();
    let mut canvas: Vec<f64> = param
        .spec
        .background()
        .iter()
        .flat_map(|&b| std::iter::repeat_n(b, h * w))
        .collect();
    let p = stroke_len(c);
    for s in param.values.chunks_exact(p) {
        let raw: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        paint_over(&mut canvas, &raw, h, w);
    }
    canvas
}

fn to_image(canvas: &[f64], shape: [usize; 3]) -> Result<Tensor> {
    Tensor::new(shape.to_vec(), canvas.iter().map(|&v| v as f32).collect())
}

/// Greedy serial stroke search using forward passes only.
///
/// Each step samples `proposals` strokes, scores the canvas with each one
/// added, and keeps the best iff it beats the current canvas; ties between
/// proposals go to the lower index.
pub fn blackbox_paint(
    obj: &CompositeObjective,
    canvas: &Param,
    net: &RecognitionNet,
    cfg: &PaintConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !matches!(canvas.spec, ParamSpec::Strokes { .. }) {
        return Err(Error::Unsupported(format!("painting on {}", canvas.spec.kind())));
    }
    check_consistent(obj, &canvas.spec, net)?;
    let shape = canvas.spec.image_shape();
    let (_, h, w) = (shape[0], shape[1], shape[2]);
    let mut param = canvas.clone();
    let mut current = canvas_of(&param);
    let first = snapshot(obj, net, 0, to_image(&current, shape)?)?;
    let mut value = first.value;
    let mut snapshots = vec![first];
    let mut log = Vec::with_capacity(cfg.budget);

    for step in 0..cfg.budget {
        let mut rng = seeds::stream(cfg.seed, seeds::PAINT, step as u64);
        let mut best: Option<(f64, Vec<f32>, Vec<f64>)> = None;
        for _ in 0..cfg.proposals {
            let stroke = random_stroke(&mut rng, &param.spec)?;
            let raw: Vec<f64> = stroke.iter().map(|&v| v as f64).collect();
            let mut trial = current.clone();
            paint_over(&mut trial, &raw, h, w);
            let (v, _) = obj.value(&to_image(&trial, shape)?, net).map_err(numerical(step))?;
            if !v.is_finite() {
                return Err(Error::NumericalFailure { step });
            }
            if best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, stroke, trial));
            }
        }
        let (best_value, stroke, trial) = best.expect("at least one proposal");
        let accepted = best_value > value;
        if accepted {
            let n = param.values.len() / stroke_len(shape[0]);
            param.values.extend_from_slice(&stroke);
            param.spec = param.spec.with_stroke_count(n + 1)?;
            current = trial;
            value = best_value;
        }
        log.push(PaintStep {
            step,
            accepted,
            best_proposal: best_value,
            value,
        });
        if (step + 1) % cfg.snapshot_every == 0 && step + 1 < cfg.budget {
            snapshots.push(snapshot(obj, net, step + 1, to_image(&current, shape)?)?);
        }
    }
    snapshots.push(snapshot(obj, net, cfg.budget, to_image(&current, shape)?)?);
    let param = Param::new(param.spec, param.values)?;
    Ok(Trajectory {
        artifact: finalize(&param)?,
        final_param: param,
        snapshots,
        paint_log: log,
    })
}

/// Objective values of `count` canvases with `strokes` random strokes each.
pub fn random_canvas_values(
    obj: &CompositeObjective,
    canvas: &ParamSpec,
    net: &RecognitionNet,
    strokes: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let shape = canvas.image_shape();
    let empty = Param::new(canvas.with_stroke_count(0)?, vec![])?;
    (0..count)
        .map(|i| {
            let mut rng = seeds::stream(seed, seeds::BASELINE, i as u64);
            let mut c = canvas_of(&empty);
            for _ in 0..strokes {
                let raw: Vec<f64> = random_stroke(&mut rng, canvas)?.iter().map(|&v| v as f64).collect();
                paint_over(&mut c, &raw, shape[1], shape[2]);
            }
            Ok(obj.value(&to_image(&c, shape)?, net)?.0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperstimulusRatio {
    /// `None` when the dataset maximum is not positive.
    pub ratio: Option<f64>,
    pub image_value: f64,
    pub dataset_max: f64,
    /// Index of the dataset image attaining the maximum.
    pub argmax: usize,
}

/// `term(image) / max over the dataset of term(.)` for an activation-type
/// term.
pub fn superstimulus_ratio(
    net: &RecognitionNet,
    term: &ObjectiveTerm,
    dataset: &Dataset,
    image: &Tensor,
) -> Result<SuperstimulusRatio> {
    if !term.is_activation() {
        return Err(Error::Unsupported(format!(
            "superstimulus ratio of a {} term",
            term.name()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("superstimulus dataset"));
    }
    let obj = CompositeObjective::single(term.clone(), 1.0, Direction::Maximize)?;
    obj.validate(net)?;
    let image_value = obj.value(image, net)?.0;
    let (mut argmax, mut dataset_max) = (0, f64::NEG_INFINITY);
    for (i, im) in dataset.images.iter().enumerate() {
        let v = obj.value(&im.image, net)?.0;
        if v > dataset_max {
            (argmax, dataset_max) = (i, v);
        }
    }
    Ok(SuperstimulusRatio {
        ratio: (dataset_max > 0.0).then(|| image_value / dataset_max),
        image_value,
        dataset_max,
        argmax,
    })
}
