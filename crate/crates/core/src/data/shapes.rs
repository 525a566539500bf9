//! Synthetic shape images: the art-free training corpus.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledImage};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Stripes,
    Checker,
    Star,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Circle,
        ShapeClass::Square,
        ShapeClass::Triangle,
        ShapeClass::Cross,
        ShapeClass::Ring,
        ShapeClass::Stripes,
        ShapeClass::Checker,
        ShapeClass::Star,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Circle => "circle",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Cross => "cross",
            ShapeClass::Ring => "ring",
            ShapeClass::Stripes => "stripes",
            ShapeClass::Checker => "checker",
            ShapeClass::Star => "star",
        }
    }

    /// Membership test in the shape's own frame, where the shape fits the
    /// unit disc and `v` points up.
    fn contains(self, u: f64, v: f64) -> bool {
        let (au, av) = (u.abs(), v.abs());
        match self {
            ShapeClass::Circle => u * u + v * v <= 1.0,
            ShapeClass::Square => au <= 0.8 && av <= 0.8,
            ShapeClass::Triangle => v >= -0.5 && v <= 1.0 - 3f64.sqrt() * au,
            ShapeClass::Cross => (au <= 0.28 && av <= 0.95) || (av <= 0.28 && au <= 0.95),
            ShapeClass::Ring => {
                let d2 = u * u + v * v;
                (0.55 * 0.55..=1.0).contains(&d2)
            }
            ShapeClass::Stripes => au <= 0.85 && av <= 0.85 && ((v + 0.85) / 0.34).floor() as i64 % 2 == 0,
            ShapeClass::Checker => {
                au <= 0.85
                    && av <= 0.85
                    && (((u + 0.85) / 0.425).floor() as i64 + ((v + 0.85) / 0.425).floor() as i64) % 2 == 0
            }
            ShapeClass::Star => star_contains(u, v),
        }
    }
}

fn star_contains(u: f64, v: f64) -> bool {
    // Ten vertices alternating between the outer and inner radius; even-odd
    // crossing test.
    let vertex = |i: usize| {
        let r = if i.is_multiple_of(2) { 1.0 } else { 0.42 };
        let a = PI / 2.0 + i as f64 * PI / 5.0;
        (r * a.cos(), r * a.sin())
    };
    let mut inside = false;
    for i in 0..10 {
        let (x0, y0) = vertex(i);
        let (x1, y1) = vertex((i + 1) % 10);
        if (y0 > v) != (y1 > v) && u < x0 + (v - y0) * (x1 - x0) / (y1 - y0) {
            inside = !inside;
        }
    }
    inside
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    Gray,
    Rgb,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Gray => 1,
            ColorMode::Rgb => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapesSpec {
    pub classes: Vec<ShapeClass>,
    pub size: usize,
    pub color: ColorMode,
    /// Maximum centre offset, as a fraction of the image size.
    pub position_jitter: f64,
    /// Radius range, as a fraction of the image size.
    pub scale_range: [f64; 2],
    /// Maximum rotation either way, in degrees.
    pub rotation_degrees: f64,
    pub noise_std: f64,
}

impl Default for ShapesSpec {
    fn default() -> Self {
        Self {
            classes: ShapeClass::ALL.to_vec(),
            size: 32,
            color: ColorMode::Rgb,
            position_jitter: 0.1,
            scale_range: [0.3, 0.42],
            rotation_degrees: 180.0,
            noise_std: 0.04,
        }
    }
}

impl ShapesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config("shapes need at least 2 classes".into()));
        }
        let mut seen = self.classes.clone();
        seen.sort_by_key(|c| c.name());
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::Config("duplicate shape class".into()));
        }
        if self.size < 16 {
            return Err(Error::Config(format!("shape image size {} < 16", self.size)));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) || self.noise_std < 0.0 || self.position_jitter < 0.0 {
            return Err(Error::Config("invalid shape jitter ranges".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.color.channels(), self.size, self.size]
    }
}

/// Where and how large a shape is drawn, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Rotation in radians.
    pub angle: f64,
}

const SUPERSAMPLE: usize = 4;

/// Fractional foreground coverage of each pixel of a `size x size` image,
/// from 4x4 supersampling.
pub fn coverage(class: ShapeClass, size: usize, p: Placement) -> Vec<f32> {
    let (sin, cos) = p.angle.sin_cos();
    let inv_r = 1.0 / p.radius;
    let mut out = vec![0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - p.cx;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - p.cy;
                    let u = (cos * px + sin * py) * inv_r;
                    let v = (sin * px - cos * py) * inv_r;
                    if class.contains(u, v) {
                        hits += 1;
                    }
                }
            }
            out[y * size + x] = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        }
    }
    out
}

fn luminance(c: &[f64]) -> f64 {
    match c {
        [g] => *g,
        [r, g, b] => 0.299 * r + 0.587 * g + 0.114 * b,
        _ => unreachable!("1 or 3 channels"),
    }
}

fn render(spec: &ShapesSpec, class: ShapeClass, rng: &mut impl Rng) -> Tensor {
    let size = spec.size;
    let s = size as f64;
    let jitter = spec.position_jitter * s;
    let placement = Placement {
        cx: s / 2.0 + rng.gen_range(-jitter..=jitter),
        cy: s / 2.0 + rng.gen_range(-jitter..=jitter),
        radius: s * rng.gen_range(spec.scale_range[0]..=spec.scale_range[1]),
        angle: rng.gen_range(-1.0..=1.0) * spec.rotation_degrees.to_radians(),
    };
    let c = spec.color.channels();
    let min_contrast = if c == 1 { 0.4 } else { 0.3 };
    let (fg, bg) = loop {
        let fg: Vec<f64> = (0..c).map(|_| rng.gen()).collect();
        let bg: Vec<f64> = (0..c).map(|_| rng.gen()).collect();
        if (luminance(&fg) - luminance(&bg)).abs() >= min_contrast {
            break (fg, bg);
        }
    };
    let cov = coverage(class, size, placement);
    let noise = Normal::new(0.0, spec.noise_std).expect("non-negative std");
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for &a in &cov {
            let v = bg[ch] + a as f64 * (fg[ch] - bg[ch]) + noise.sample(rng);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(vec![c, size, size], data).expect("finite pixels")
}

/// Exactly `n_per_class` images per class, interleaved by class. Each image
/// draws from its own seeded stream, so the result is a pure function of
/// `(spec, n_per_class, seed)`.
pub fn generate_shapes(spec: &ShapesSpec, n_per_class: usize, seed: u64) -> Result<Dataset> {
    generate(spec, n_per_class, seed, seeds::SHAPES_TRAIN)
}

/// Like [`generate_shapes`] but from the held-out streams, so no image
/// coincides with a training image of the same seed.
pub fn generate_heldout(spec: &ShapesSpec, n_per_class: usize, seed: u64) -> Result<Dataset> {
    generate(spec, n_per_class, seed, seeds::SHAPES_HELDOUT)
}

/// Image `index` of class `label` from the held-out streams; equal to the
/// corresponding member of [`generate_heldout`].
pub fn heldout_image(spec: &ShapesSpec, label: usize, index: usize, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let class = *spec
        .classes
        .get(label)
        .ok_or_else(|| Error::OutOfRange(format!("class {label} of {}", spec.classes.len())))?;
    let mut rng = seeds::stream(seed, seeds::SHAPES_HELDOUT, ((label as u64) << 32) | index as u64);
    Ok(render(spec, class, &mut rng))
}

fn generate(spec: &ShapesSpec, n_per_class: usize, seed: u64, tag: u64) -> Result<Dataset> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    let mut images = Vec::with_capacity(n_per_class * spec.classes.len());
    for i in 0..n_per_class {
        for (label, &class) in spec.classes.iter().enumerate() {
            let mut rng = seeds::stream(seed, tag, ((label as u64) << 32) | i as u64);
            images.push(LabeledImage {
                image: render(spec, class, &mut rng),
                label,
                id: format!("{class}-{i:05}"),
            });
        }
    }
    Dataset::new(images, spec.class_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let spec = ShapesSpec::default();
        let a = generate_shapes(&spec, 3, 42).unwrap();
        let b = generate_shapes(&spec, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_shapes(&spec, 3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn heldout_differs_from_train_and_matches_single_draws() {
        let spec = ShapesSpec::default();
        let train = generate_shapes(&spec, 2, 9).unwrap();
        let held = generate_heldout(&spec, 2, 9).unwrap();
        assert_ne!(train.images[0].image, held.images[0].image);
        for im in &held.images {
            let i: usize = im.id.rsplit('-').next().unwrap().parse().unwrap();
            assert_eq!(heldout_image(&spec, im.label, i, 9).unwrap(), im.image);
        }
    }

    #[test]
    fn class_histogram_is_uniform() {
        let spec = ShapesSpec::default();
        let d = generate_shapes(&spec, 7, 0).unwrap();
        assert_eq!(d.class_histogram(), vec![7; 8]);
        assert!(d
            .images
            .iter()
            .all(|im| im.image.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn full_size_circle_covers_quarter_pi() {
        let size = 32;
        let cov = coverage(
            ShapeClass::Circle,
            size,
            Placement {
                cx: 16.0,
                cy: 16.0,
                radius: 16.0,
                angle: 0.0,
            },
        );
        let frac = cov.iter().map(|&v| v as f64).sum::<f64>() / (size * size) as f64;
        let target = std::f64::consts::FRAC_PI_4;
        assert!((frac - target).abs() <= 0.1 * target, "{frac}");
    }

    #[test]
    fn antialiasing_produces_fractional_edges() {
        let cov = coverage(
            ShapeClass::Circle,
            16,
            Placement {
                cx: 8.0,
                cy: 8.0,
                radius: 5.3,
                angle: 0.0,
            },
        );
        assert!(cov.iter().any(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn every_class_draws_something_distinct() {
        let p = Placement {
            cx: 16.0,
            cy: 16.0,
            radius: 12.0,
            angle: 0.0,
        };
        let maps: Vec<Vec<f32>> = ShapeClass::ALL.iter().map(|&c| coverage(c, 32, p)).collect();
        for (i, a) in maps.iter().enumerate() {
            assert!(a.iter().sum::<f32>() > 20.0, "{}", ShapeClass::ALL[i]);
            for b in &maps[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn unknown_tag_and_bad_specs_are_rejected() {
        assert!(matches!("hexagon".parse::<ShapeClass>(), Err(Error::UnknownClass(_))));
        let spec = ShapesSpec {
            classes: vec![ShapeClass::Circle],
            ..Default::default()
        };
        assert!(generate_shapes(&spec, 1, 0).is_err());
        let spec = ShapesSpec {
            size: 8,
            ..Default::default()
        };
        assert!(generate_shapes(&spec, 1, 0).is_err());
        assert!(generate_shapes(&ShapesSpec::default(), 0, 0).is_err());
    }
}
