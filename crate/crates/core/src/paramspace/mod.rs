//! Image parameterizations: free pixels, a preconditioned spectrum, and
//! constrained media (halftone cells, vector strokes, a fixed palette).
//!
//! `decode` is the differentiable relaxation used during optimization;
//! `finalize` produces the hard artifact and its medium description.

mod frequency;
mod palette;
mod strokes;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{Real, Tensor};

pub use frequency::frequency_scale;
pub use palette::SHARPNESS as PALETTE_SHARPNESS;
pub use strokes::{
    decode_stroke, max_size, paint_over, render as render_strokes, stroke_len, Primitive, Stroke, EDGE_SIGMA,
    SEGMENT_HALF_WIDTH,
};

/// Standard deviation of noise initialization.
pub const INIT_NOISE_STD: f64 = 0.01;
/// Lower clamp for pixels before the inverse logistic; the upper one is
/// `1 - ENCODE_EPS`.
pub const ENCODE_EPS: f32 = 1e-4;

fn one() -> f64 {
    1.0
}

fn one_channel() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamSpec {
    Pixel {
        height: usize,
        width: usize,
        channels: usize,
    },
    Frequency {
        height: usize,
        width: usize,
        channels: usize,
    },
    Halftone {
        grid_height: usize,
        grid_width: usize,
        cell_size: usize,
        #[serde(default = "one")]
        temperature: f64,
        /// Output channels; the single ink plane is replicated.
        #[serde(default = "one_channel")]
        channels: usize,
    },
    Strokes {
        height: usize,
        width: usize,
        channels: usize,
        count: usize,
        #[serde(default)]
        primitive: Primitive,
        /// One value per channel; white when absent.
        #[serde(default)]
        background: Option<Vec<f32>>,
    },
    PaletteStyle {
        colors: usize,
        stroke_size: usize,
        #[serde(default = "one")]
        temperature: f64,
        /// Pixel or Frequency at `1 / stroke_size` of the output resolution.
        inner: Box<ParamSpec>,
    },
}

impl ParamSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ParamSpec::Pixel { .. } => "pixel",
            ParamSpec::Frequency { .. } => "frequency",
            ParamSpec::Halftone { .. } => "halftone",
            ParamSpec::Strokes { .. } => "strokes",
            ParamSpec::PaletteStyle { .. } => "palette_style",
        }
    }

    /// Decoded image shape, `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        match self {
            ParamSpec::Pixel {
                height,
                width,
                channels,
            }
            | ParamSpec::Frequency {
                height,
                width,
                channels,
            }
            | ParamSpec::Strokes {
                height,
                width,
                channels,
                ..
            } => [*channels, *height, *width],
            ParamSpec::Halftone {
                grid_height,
                grid_width,
                cell_size,
                channels,
                ..
            } => [*channels, grid_height * cell_size, grid_width * cell_size],
            ParamSpec::PaletteStyle { stroke_size, inner, .. } => {
                let [c, h, w] = inner.image_shape();
                [c, h * stroke_size, w * stroke_size]
            }
        }
    }

    /// Number of parameters.
    pub fn arity(&self) -> usize {
        match self {
            ParamSpec::Pixel {
                height,
                width,
                channels,
            } => channels * height * width,
            ParamSpec::Frequency {
                height,
                width,
                channels,
            } => 2 * channels * height * width,
            ParamSpec::Halftone {
                grid_height,
                grid_width,
                ..
            } => grid_height * grid_width,
            ParamSpec::Strokes { channels, count, .. } => count * stroke_len(*channels),
            ParamSpec::PaletteStyle { colors, inner, .. } => inner.arity() + colors * inner.image_shape()[0],
        }
    }

    /// Whether decode depends on the temperature.
    pub fn is_relaxed(&self) -> bool {
        matches!(self, ParamSpec::Halftone { .. } | ParamSpec::PaletteStyle { .. })
    }

    pub fn initial_temperature(&self) -> f64 {
        match self {
            ParamSpec::Halftone { temperature, .. } | ParamSpec::PaletteStyle { temperature, .. } => *temperature,
            _ => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{} parameterization: {m}", self.kind())));
        let [c, h, w] = self.image_shape();
        if c == 0 || h == 0 || w == 0 {
            return bad(format!("empty image shape {:?}", [c, h, w]));
        }
        match self {
            ParamSpec::Halftone { temperature, .. } | ParamSpec::PaletteStyle { temperature, .. }
                if !(*temperature > 0.0 && temperature.is_finite()) =>
            {
                bad(format!("temperature {temperature} must be positive"))
            }
            ParamSpec::Strokes {
                background: Some(b), ..
            } if b.len() != c || b.iter().any(|v| !(0.0..=1.0).contains(v)) => {
                bad(format!("background {b:?} must hold {c} values in [0, 1]"))
            }
            ParamSpec::PaletteStyle { colors, inner, .. } => {
                if *colors == 0 {
                    return bad("needs at least one colour".into());
                }
                if !matches!(**inner, ParamSpec::Pixel { .. } | ParamSpec::Frequency { .. }) {
                    return bad(format!("inner must be pixel or frequency, got {}", inner.kind()));
                }
                inner.validate()
            }
            _ => Ok(()),
        }
    }

    /// Canvas colour of a strokes parameterization.
    pub fn background(&self) -> Vec<f64> {
        match self {
            ParamSpec::Strokes {
                background: Some(b), ..
            } => b.iter().map(|&v| v as f64).collect(),
            _ => vec![1.0; self.image_shape()[0]],
        }
    }

    /// The same spec with a different stroke count.
    pub fn with_stroke_count(&self, n: usize) -> Result<Self> {
        match self {
            ParamSpec::Strokes {
                height,
                width,
                channels,
                primitive,
                background,
                ..
            } => Ok(ParamSpec::Strokes {
                height: *height,
                width: *width,
                channels: *channels,
                count: n,
                primitive: *primitive,
                background: background.clone(),
            }),
            other => Err(Error::Unsupported(format!("stroke count on {}", other.kind()))),
        }
    }
}

/// Geometric annealing of the relaxation temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub factor: f64,
    /// Steps between multiplications.
    pub every: usize,
    pub min: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            factor: 0.85,
            every: 50,
            min: 0.05,
        }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor <= 1.0) || self.every == 0 || !(self.min > 0.0) {
            return Err(Error::Config(format!("temperature schedule {self:?}")));
        }
        Ok(())
    }

    /// Temperature at `step`, starting from `initial`; never raised above
    /// `initial`.
    pub fn at(&self, initial: f64, step: usize) -> f64 {
        let k = (step / self.every).min(i32::MAX as usize) as i32;
        (initial * self.factor.powi(k)).max(self.min.min(initial))
    }

    /// Distinct temperatures visited from `initial` until the floor.
    pub fn levels(&self, initial: f64) -> Vec<f64> {
        let mut out = vec![initial];
        let mut step = 0;
        loop {
            step += self.every;
            let t = self.at(initial, step);
            if t >= *out.last().expect("non-empty") {
                return out;
            }
            out.push(t);
        }
    }
}

/// A parameterization plus its current values and relaxation temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub spec: ParamSpec,
    pub values: Vec<f32>,
    pub temperature: f64,
}

impl Param {
    pub fn new(spec: ParamSpec, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.arity() {
            return Err(Error::Arity {
                variant: spec.kind(),
                expected: spec.arity(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "param" });
        }
        let temperature = spec.initial_temperature();
        Ok(Self {
            spec,
            values,
            temperature,
        })
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    fn check(&self) -> Result<()> {
        self.spec.validate()?;
        if self.values.len() != self.spec.arity() {
            return Err(Error::Arity {
                variant: self.spec.kind(),
                expected: self.spec.arity(),
                found: self.values.len(),
            });
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

/// Handles of a decoded parameterization on a tape.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// Parameter blocks in value order; their gradients concatenate to the
    /// gradient of the flat parameter vector.
    pub params: Vec<(Var, usize)>,
    /// `1 x C x H x W` image.
    pub image: Var,
}

impl Decoded {
    /// Flat gradient of the parameter vector after `backward`.
    pub fn gradient<T: Real>(&self, tape: &Tape<T>) -> Vec<T> {
        let mut out = Vec::new();
        for &(v, len) in &self.params {
            match tape.grad(v) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(T::ZERO, len)),
            }
        }
        out
    }
}

fn block<T: Real>(tape: &mut Tape<T>, values: &[T], shape: &[usize], trainable: bool) -> Var {
    let t = Tensor::from_parts(shape.to_vec(), values.to_vec());
    if trainable {
        tape.leaf(t)
    } else {
        tape.constant(t)
    }
}

fn decode_pixels<T: Real>(tape: &mut Tape<T>, spec: &ParamSpec, values: &[T], trainable: bool) -> Result<(Var, Var)> {
    let [c, h, w] = spec.image_shape();
    match spec {
        ParamSpec::Pixel { .. } => {
            let p = block(tape, values, &[1, c, h, w], trainable);
            Ok((p, tape.sigmoid(p)?))
        }
        ParamSpec::Frequency { .. } => {
            let p = block(tape, values, &[c, h, w, 2], trainable);
            let logits = frequency::spectrum_op(tape, p)?;
            Ok((p, tape.sigmoid(logits)?))
        }
        other => Err(Error::Unsupported(format!("{} as a pixel field", other.kind()))),
    }
}

/// Records the decode of `param` on `tape`; the parameters become leaves when
/// `trainable`.
pub fn decode_on<T: Real>(tape: &mut Tape<T>, param: &Param, trainable: bool) -> Result<Decoded> {
    let values: Vec<T> = param.values.iter().map(|&v| T::of(v as f64)).collect();
    decode_values_on(tape, param, &values, trainable)
}

/// As [`decode_on`], with the parameter values given at the tape's
/// precision instead of `param.values`.
pub fn decode_values_on<T: Real>(tape: &mut Tape<T>, param: &Param, values: &[T], trainable: bool) -> Result<Decoded> {
    param.check()?;
    if values.len() != param.values.len() {
        return Err(Error::Arity {
            variant: param.spec.kind(),
            expected: param.values.len(),
            found: values.len(),
        });
    }
    let spec = &param.spec;
    let [c, h, w] = spec.image_shape();
    match spec {
        ParamSpec::Pixel { .. } | ParamSpec::Frequency { .. } => {
            let (p, image) = decode_pixels(tape, spec, values, trainable)?;
            Ok(Decoded {
                params: vec![(p, values.len())],
                image,
            })
        }
        ParamSpec::Halftone {
            grid_height,
            grid_width,
            cell_size,
            ..
        } => {
            let p = block(tape, values, &[1, 1, *grid_height, *grid_width], trainable);
            let scaled = tape.scale(p, 1.0 / param.temperature)?;
            let ink = tape.sigmoid(scaled)?;
            let mut image = tape.upsample_nearest(ink, *cell_size)?;
            if c > 1 {
                image = tape.repeat_channels(image, c)?;
            }
            Ok(Decoded {
                params: vec![(p, values.len())],
                image,
            })
        }
        ParamSpec::Strokes { count, .. } => {
            let background = spec.background();
            if *count == 0 {
                let canvas: Vec<T> = background
                    .iter()
                    .flat_map(|&b| std::iter::repeat_n(T::of(b), h * w))
                    .collect();
                let image = tape.constant(Tensor::from_parts(vec![1, c, h, w], canvas));
                return Ok(Decoded { params: vec![], image });
            }
            let p = block(tape, values, &[*count, stroke_len(c)], trainable);
            let image = strokes::raster_op(tape, p, &background, h, w)?;
            Ok(Decoded {
                params: vec![(p, values.len())],
                image,
            })
        }
        ParamSpec::PaletteStyle {
            colors,
            stroke_size,
            inner,
            ..
        } => {
            let n_inner = inner.arity();
            let (p, low) = decode_pixels(tape, inner, &values[..n_inner], trainable)?;
            let up = tape.upsample_nearest(low, *stroke_size)?;
            let logits = block(tape, &values[n_inner..], &[*colors, c], trainable);
            let palette = tape.sigmoid(logits)?;
            let image = palette::assign_op(tape, up, palette, param.temperature)?;
            Ok(Decoded {
                params: vec![(p, n_inner), (logits, colors * c)],
                image,
            })
        }
    }
}

/// The relaxed image, `C x H x W` in `[0, 1]`.
pub fn decode(param: &Param) -> Result<Tensor> {
    let mut tape = Tape::<f32>::new();
    let d = decode_on(&mut tape, param, false)?;
    let [c, h, w] = param.spec.image_shape();
    tape.value(d.image).clone().reshape(&[c, h, w])
}

/// Physical instructions accompanying a finalized artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediumDescription {
    /// Free pixels; the image is the artifact.
    Raster,
    /// One line per grid row, `1` for a white (uncut) cell, `0` for ink.
    CutGrid {
        rows: Vec<String>,
    },
    Svg {
        document: String,
    },
    Palette {
        colors: Vec<Vec<f32>>,
    },
}

impl MediumDescription {
    /// File name and contents when the description has a file form.
    pub fn file(&self) -> Option<(&'static str, String)> {
        match self {
            MediumDescription::CutGrid { rows } => Some(("cuts.txt", rows.join("\n") + "\n")),
            MediumDescription::Svg { document } => Some(("medium.svg", document.clone())),
            MediumDescription::Raster | MediumDescription::Palette { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finalized {
    /// `C x H x W`.
    pub image: Tensor,
    pub medium: MediumDescription,
    /// Parameters already on the hard constraint: finalizing them again
    /// reproduces `image` and `medium`.
    pub param: Param,
}

fn logit(v: f32) -> f64 {
    let v = v.clamp(ENCODE_EPS, 1.0 - ENCODE_EPS) as f64;
    (v / (1.0 - v)).ln()
}

pub fn finalize(param: &Param) -> Result<Finalized> {
    param.check()?;
    let spec = &param.spec;
    let [c, h, w] = spec.image_shape();
    match spec {
        ParamSpec::Pixel { .. } | ParamSpec::Frequency { .. } => Ok(Finalized {
            image: decode(param)?,
            medium: MediumDescription::Raster,
            param: param.clone(),
        }),
        ParamSpec::Halftone {
            grid_width, cell_size, ..
        } => {
            let bits: Vec<bool> = param.values.iter().map(|&v| v >= 0.0).collect();
            let mut image = Vec::with_capacity(c * h * w);
            for _ in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        image.push(if bits[(i / cell_size) * grid_width + j / cell_size] {
                            1.0
                        } else {
                            0.0
                        });
                    }
                }
            }
            let rows = bits
                .chunks(*grid_width)
                .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
                .collect();
            let hard = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
            Ok(Finalized {
                image: Tensor::new(vec![c, h, w], image)?,
                medium: MediumDescription::CutGrid { rows },
                param: Param::new(spec.clone(), hard)?.with_temperature(param.temperature),
            })
        }
        ParamSpec::Strokes { .. } => {
            let raw: Vec<f64> = param.values.iter().map(|&v| v as f64).collect();
            let bg = spec.background();
            Ok(Finalized {
                image: decode(param)?,
                medium: MediumDescription::Svg {
                    document: strokes::to_svg(&raw, &bg, h, w),
                },
                param: param.clone(),
            })
        }
        ParamSpec::PaletteStyle {
            colors,
            stroke_size,
            inner,
            ..
        } => {
            let n_inner = inner.arity();
            let inner_param = Param::new((**inner).clone(), param.values[..n_inner].to_vec())?;
            let low = decode(&inner_param)?;
            let palette: Vec<f32> = param.values[n_inner..]
                .iter()
                .map(|&v| crate::autodiff::sigmoid(v as f64) as f32)
                .collect();
            let assign = palette::nearest(low.data(), &palette, c);
            let [_, lh, lw] = inner.image_shape();
            let mut hard_low = vec![0f32; c * lh * lw];
            for (p, &j) in assign.iter().enumerate() {
                for ch in 0..c {
                    hard_low[ch * lh * lw + p] = palette[j * c + ch];
                }
            }
            let mut image = Vec::with_capacity(c * h * w);
            for ch in 0..c {
                for i in 0..h {
                    for jx in 0..w {
                        image.push(hard_low[(ch * lh + i / stroke_size) * lw + jx / stroke_size]);
                    }
                }
            }
            let hard_low = Tensor::new(vec![c, lh, lw], hard_low)?;
            let mut values = encode_image(inner, &hard_low)?;
            values.extend_from_slice(&param.values[n_inner..]);
            Ok(Finalized {
                image: Tensor::new(vec![c, h, w], image)?,
                medium: MediumDescription::Palette {
                    colors: palette.chunks(c).take(*colors).map(<[f32]>::to_vec).collect(),
                },
                param: Param::new(spec.clone(), values)?.with_temperature(param.temperature),
            })
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum InitMode<'a> {
    Noise,
    FromImage(&'a Tensor),
}

fn check_source(spec: &ParamSpec, source: &Tensor) -> Result<()> {
    let want = spec.image_shape();
    let ok = match *source.shape() {
        [c, h, w] | [1, c, h, w] => [c, h, w] == want,
        _ => false,
    };
    if !ok {
        return Err(Error::shape(
            "init_param",
            format!("source {:?} vs parameterization image {want:?}", source.shape()),
        ));
    }
    Ok(())
}

/// Parameter values whose decode reproduces `source` for pixel and
/// frequency parameterizations.
pub fn encode_image(spec: &ParamSpec, source: &Tensor) -> Result<Vec<f32>> {
    let [c, h, w] = spec.image_shape();
    match spec {
        ParamSpec::Pixel { .. } => Ok(source.data().iter().map(|&v| logit(v) as f32).collect()),
        ParamSpec::Frequency { .. } => {
            let logits: Vec<f64> = source.data().iter().map(|&v| logit(v)).collect();
            Ok(frequency::analyze(&logits, c, h, w)
                .into_iter()
                .map(|v| v as f32)
                .collect())
        }
        other => Err(Error::Unsupported(format!("encode for {}", other.kind()))),
    }
}

fn evenly_spaced_palette(k: usize, c: usize) -> Vec<f32> {
    (0..k)
        .flat_map(|j| std::iter::repeat_n(logit((j as f32 + 0.5) / k as f32) as f32, c))
        .collect()
}

pub fn init_param(spec: &ParamSpec, mode: InitMode<'_>, seed: u64) -> Result<Param> {
    spec.validate()?;
    let mut rng = seeds::rng(seed, seeds::PARAM_INIT);
    let normal = Normal::new(0.0, INIT_NOISE_STD).expect("valid std");
    let noise = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f32> {
        (0..n).map(|_| normal.sample(rng) as f32).collect()
    };
    let values = match (spec, mode) {
        (ParamSpec::Pixel { .. } | ParamSpec::Frequency { .. } | ParamSpec::Halftone { .. }, InitMode::Noise) => {
            noise(&mut rng, spec.arity())
        }
        (ParamSpec::Pixel { .. } | ParamSpec::Frequency { .. }, InitMode::FromImage(src)) => {
            check_source(spec, src)?;
            encode_image(spec, src)?
        }
        (
            ParamSpec::Halftone {
                grid_height,
                grid_width,
                cell_size,
                temperature,
                ..
            },
            InitMode::FromImage(src),
        ) => {
            check_source(spec, src)?;
            let [c, h, w] = spec.image_shape();
            let d = src.data();
            let mut means = Vec::with_capacity(grid_height * grid_width);
            for gy in 0..*grid_height {
                for gx in 0..*grid_width {
                    let mut s = 0.0f64;
                    for ch in 0..c {
                        for i in gy * cell_size..(gy + 1) * cell_size {
                            for j in gx * cell_size..(gx + 1) * cell_size {
                                s += d[(ch * h + i) * w + j] as f64;
                            }
                        }
                    }
                    means.push(s / (c * cell_size * cell_size) as f64);
                }
            }
            // Stretch cell means to the full range so the threshold sits
            // midway between the darkest and lightest cells.
            let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            means
                .iter()
                .map(|&m| {
                    let v = if span > 1e-6 { (m - lo) / span } else { m };
                    (temperature * logit(v as f32)) as f32
                })
                .collect()
        }
        (
            ParamSpec::Strokes {
                channels,
                count,
                primitive,
                ..
            },
            InitMode::Noise,
        ) => {
            let mut out = Vec::with_capacity(spec.arity());
            for _ in 0..*count {
                let mut s = noise(&mut rng, stroke_len(*channels));
                // Spread positions and orientations; the rest stays near neutral.
                s[0] = logit(rng.gen_range(0.05..0.95)) as f32;
                s[1] = logit(rng.gen_range(0.05..0.95)) as f32;
                s[3] = rng.gen_range(0.0..std::f32::consts::PI);
                s[5 + channels] = match primitive {
                    Primitive::Disc => 0.0,
                    Primitive::Segment => 1.0,
                    Primitive::Mixed => f32::from(rng.gen_bool(0.5)),
                };
                out.extend(s);
            }
            out
        }
        (ParamSpec::Strokes { .. }, InitMode::FromImage(_)) => {
            return Err(Error::FromImageUnsupported("strokes"));
        }
        (ParamSpec::PaletteStyle { colors, inner, .. }, mode) => {
            let c = spec.image_shape()[0];
            let mut v = match mode {
                InitMode::Noise => noise(&mut rng, inner.arity()),
                InitMode::FromImage(src) => {
                    check_source(spec, src)?;
                    encode_image(inner, &cell_means(src, spec)?)?
                }
            };
            v.extend(evenly_spaced_palette(*colors, c));
            v
        }
    };
    Param::new(spec.clone(), values)
}

/// Averages `source` over `stroke_size` cells down to the inner resolution.
fn cell_means(source: &Tensor, spec: &ParamSpec) -> Result<Tensor> {
    let ParamSpec::PaletteStyle {
        stroke_size: s, inner, ..
    } = spec
    else {
        unreachable!("palette only");
    };
    let [c, lh, lw] = inner.image_shape();
    let (h, w) = (lh * s, lw * s);
    let d = source.data();
    let mut out = Vec::with_capacity(c * lh * lw);
    for ch in 0..c {
        for y in 0..lh {
            for x in 0..lw {
                let mut acc = 0.0f64;
                for i in y * s..(y + 1) * s {
                    for j in x * s..(x + 1) * s {
                        acc += d[(ch * h + i) * w + j] as f64;
                    }
                }
                out.push((acc / (s * s) as f64) as f32);
            }
        }
    }
    Tensor::new(vec![c, lh, lw], out)
}

/// Stroke values for a single stroke from image-space attributes: centre,
/// size and colour in `[0, 1]`-relative units, opacity in `(0, 1)`.
pub fn encode_stroke(stroke: &Stroke, h: usize, w: usize) -> Vec<f32> {
    let inv = |v: f64| logit(v as f32) as f32;
    let mut out = vec![
        inv(stroke.x / w as f64),
        inv(stroke.y / h as f64),
        inv(stroke.size / max_size(h, w)),
        stroke.angle as f32,
    ];
    out.extend(stroke.color.iter().map(|&c| inv(c)));
    out.push(inv(stroke.opacity));
    out.push(if stroke.segment { 1.0 } else { 0.0 });
    out
}
