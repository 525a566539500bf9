//! Procedural style sources: stripes, checks and dots in random colours.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Stripes,
    Checks,
    Dots,
}

impl TextureKind {
    pub const ALL: [TextureKind; 3] = [TextureKind::Stripes, TextureKind::Checks, TextureKind::Dots];

    pub fn name(self) -> &'static str {
        match self {
            TextureKind::Stripes => "stripes",
            TextureKind::Checks => "checks",
            TextureKind::Dots => "dots",
        }
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown texture {s:?}")))
    }
}

/// A `channels x size x size` texture; the same `(kind, seed)` always gives
/// the same image.
pub fn texture(kind: TextureKind, channels: usize, size: usize, seed: u64) -> Result<Tensor> {
    if channels == 0 || size == 0 {
        return Err(Error::Config("texture needs a non-empty shape".into()));
    }
    let mut rng = seeds::stream(seed, seeds::STYLE_SOURCE, kind as u64);
    let a: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.0..1.0)).collect();
    let b: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.0..1.0)).collect();
    let period = rng.gen_range(3.0..7.0f64);
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut out = vec![0f32; channels * size * size];
    for i in 0..size {
        for j in 0..size {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            let (u, v) = (x * ca + y * sa, -x * sa + y * ca);
            let on = match kind {
                TextureKind::Stripes => (u / period).floor() as i64 % 2 == 0,
                TextureKind::Checks => ((u / period).floor() as i64 + (v / period).floor() as i64) % 2 == 0,
                TextureKind::Dots => {
                    let fu = (u / period).rem_euclid(1.0) - 0.5;
                    let fv = (v / period).rem_euclid(1.0) - 0.5;
                    fu * fu + fv * fv < 0.09
                }
            };
            let col = if on { &a } else { &b };
            for ch in 0..channels {
                out[(ch * size + i) * size + j] = col[ch] as f32;
            }
        }
    }
    Tensor::new(vec![channels, size, size], out)
}
