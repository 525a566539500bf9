//! Soft rasterization of disc and segment strokes, composited in order.
//!
//! Per-stroke layout (`6 + C` values): x, y, size, angle, `C` color logits,
//! opacity logit, kind flag. Position, size, color and opacity pass through
//! a logistic; the flag selects a segment when `>= 0.5` and carries no
//! gradient.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Soft edge width in pixels.
pub const EDGE_SIGMA: f64 = 1.0;
/// Half the thickness of a segment stroke, in pixels.
pub const SEGMENT_HALF_WIDTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    #[default]
    Disc,
    Segment,
    /// Each stroke picks disc or segment at random.
    Mixed,
}

pub fn stroke_len(channels: usize) -> usize {
    6 + channels
}

/// Largest radius (disc) or half-length (segment).
pub fn max_size(h: usize, w: usize) -> f64 {
    h.max(w) as f64 / 4.0
}

/// A stroke in image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Stroke {
    pub segment: bool,
    pub x: f64,
    pub y: f64,
    /// Radius of a disc, half-length of a segment.
    pub size: f64,
    pub angle: f64,
    pub color: Vec<f64>,
    pub opacity: f64,
}

pub fn decode_stroke(raw: &[f64], h: usize, w: usize) -> Stroke {
    let c = raw.len() - 6;
    Stroke {
        segment: raw[5 + c] >= 0.5,
        x: w as f64 * sigmoid(raw[0]),
        y: h as f64 * sigmoid(raw[1]),
        size: max_size(h, w) * sigmoid(raw[2]),
        angle: raw[3],
        color: raw[4..4 + c].iter().map(|&v| sigmoid(v)).collect(),
        opacity: sigmoid(raw[4 + c]),
    }
}

/// Signed distance from pixel centre `(px, py)` to the stroke's edge and its
/// partials with respect to `(x, y, size, angle)`.
fn edge_distance(s: &Stroke, px: f64, py: f64) -> (f64, [f64; 4]) {
    if !s.segment {
        let (ex, ey) = (px - s.x, py - s.y);
        let dist = (ex * ex + ey * ey).sqrt();
        let grad = if dist > 1e-12 {
            [-ex / dist, -ey / dist, -1.0, 0.0]
        } else {
            [0.0, 0.0, -1.0, 0.0]
        };
        return (dist - s.size, grad);
    }
    let (ux, uy) = (s.angle.cos(), s.angle.sin());
    let t0 = (px - s.x) * ux + (py - s.y) * uy;
    let t = t0.clamp(-s.size, s.size);
    let (ex, ey) = (px - s.x - t * ux, py - s.y - t * uy);
    let dist = (ex * ex + ey * ey).sqrt();
    let d = dist - SEGMENT_HALF_WIDTH;
    if dist <= 1e-12 {
        return (d, [0.0; 4]);
    }
    let (nx, ny) = (ex / dist, ey / dist);
    let d_angle = -t * (nx * -uy + ny * ux);
    let d_size = if t0.abs() > s.size {
        -t0.signum() * (nx * ux + ny * uy)
    } else {
        0.0
    };
    (d, [-nx, -ny, d_size, d_angle])
}

fn coverage(d: f64) -> f64 {
    sigmoid(-d / EDGE_SIGMA)
}

/// Composites one stroke (`6 + C` raw values) onto a `C x H x W` canvas.
pub fn paint_over(canvas: &mut [f64], raw: &[f64], h: usize, w: usize) {
    let s = decode_stroke(raw, h, w);
    for i in 0..h {
        for j in 0..w {
            let a = s.opacity * coverage(edge_distance(&s, j as f64 + 0.5, i as f64 + 0.5).0);
            for (ch, col) in s.color.iter().enumerate() {
                let v = &mut canvas[(ch * h + i) * w + j];
                *v = *v * (1.0 - a) + a * col;
            }
        }
    }
}

/// Composites `strokes` (`n x (6 + C)`) over `background`; returns the canvas
/// before each stroke followed by the final canvas.
fn composite(raw: &[f64], n: usize, background: &[f64], h: usize, w: usize) -> Vec<Vec<f64>> {
    let c = background.len();
    let p = stroke_len(c);
    let mut canvas: Vec<f64> = background.iter().flat_map(|&b| std::iter::repeat_n(b, h * w)).collect();
    let mut history = Vec::with_capacity(n + 1);
    for k in 0..n {
        history.push(canvas.clone());
        paint_over(&mut canvas, &raw[k * p..][..p], h, w);
    }
    history.push(canvas);
    history
}

/// Rasterizes `raw` strokes to a `C x H x W` image.
pub fn render(raw: &[f64], background: &[f64], h: usize, w: usize) -> Vec<f64> {
    let n = raw.len() / stroke_len(background.len());
    composite(raw, n, background, h, w).pop().expect("final canvas")
}

#[derive(Debug)]
struct Raster {
    h: usize,
    w: usize,
    background: Vec<f64>,
    /// Canvas before each stroke.
    history: Vec<Vec<f64>>,
}

impl<T: Real> Backward<T> for Raster {
    fn name(&self) -> &'static str {
        "strokes"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let (h, w, c) = (self.h, self.w, self.background.len());
        let p = stroke_len(c);
        let raw: Vec<f64> = inputs[0].data().iter().map(|v| v.f64()).collect();
        let n = raw.len() / p;
        let mut grad_canvas: Vec<f64> = g.iter().map(|v| v.f64()).collect();
        let mut out = vec![0.0; raw.len()];
        for k in (0..n).rev() {
            let r = &raw[k * p..][..p];
            let s = decode_stroke(r, h, w);
            let prev = &self.history[k];
            let (mut dgeom, mut dcol, mut dalpha) = ([0.0f64; 4], vec![0.0; c], 0.0);
            for i in 0..h {
                for j in 0..w {
                    let (d, dd) = edge_distance(&s, j as f64 + 0.5, i as f64 + 0.5);
                    let m = coverage(d);
                    let a = s.opacity * m;
                    let mut da = 0.0;
                    for ch in 0..c {
                        let idx = (ch * h + i) * w + j;
                        let gc = grad_canvas[idx];
                        da += gc * (s.color[ch] - prev[idx]);
                        dcol[ch] += gc * a;
                        grad_canvas[idx] = gc * (1.0 - a);
                    }
                    dalpha += da * m;
                    let dd_total = da * s.opacity * (-m * (1.0 - m) / EDGE_SIGMA);
                    for (acc, part) in dgeom.iter_mut().zip(dd) {
                        *acc += dd_total * part;
                    }
                }
            }
            let o = &mut out[k * p..][..p];
            let ds = |v: f64| sigmoid(v) * (1.0 - sigmoid(v));
            o[0] = dgeom[0] * w as f64 * ds(r[0]);
            o[1] = dgeom[1] * h as f64 * ds(r[1]);
            o[2] = dgeom[2] * max_size(h, w) * ds(r[2]);
            o[3] = dgeom[3];
            for ch in 0..c {
                o[4 + ch] = dcol[ch] * ds(r[4 + ch]);
            }
            o[4 + c] = dalpha * ds(r[4 + c]);
        }
        vec![Some(out.into_iter().map(T::of).collect())]
    }
}

/// `n x (6 + C)` strokes to a `1 x C x H x W` image.
pub(crate) fn raster_op<T: Real>(
    tape: &mut Tape<T>,
    strokes: Var,
    background: &[f64],
    h: usize,
    w: usize,
) -> Result<Var> {
    let c = background.len();
    let n = match *tape.shape(strokes) {
        [n, p] if p == stroke_len(c) => n,
        ref s => {
            return Err(Error::shape(
                "strokes",
                format!("expected n x {}, got {s:?}", stroke_len(c)),
            ))
        }
    };
    let raw: Vec<f64> = tape.value(strokes).data().iter().map(|v| v.f64()).collect();
    let mut history = composite(&raw, n, background, h, w);
    let image = history.pop().expect("final canvas");
    tape.record(
        Tensor::from_parts(vec![1, c, h, w], image.into_iter().map(T::of).collect()),
        vec![strokes],
        Box::new(Raster {
            h,
            w,
            background: background.to_vec(),
            history,
        }),
    )
}

fn rgb(color: &[f64]) -> String {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match color {
        [g] => format!("rgb({0},{0},{0})", q(*g)),
        [r, g, b, ..] => format!("rgb({},{},{})", q(*r), q(*g), q(*b)),
        _ => "none".into(),
    }
}

/// The stroke program as an SVG document in pixel units.
pub fn to_svg(raw: &[f64], background: &[f64], h: usize, w: usize) -> String {
    let p = stroke_len(background.len());
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"{}\"/>\n",
        rgb(background)
    );
    for r in raw.chunks_exact(p) {
        let s = decode_stroke(r, h, w);
        let color = rgb(&s.color);
        if s.segment {
            let (dx, dy) = (s.size * s.angle.cos(), s.size * s.angle.sin());
            let _ = writeln!(
                svg,
                "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"{color}\" \
                 stroke-width=\"{}\" stroke-linecap=\"round\" stroke-opacity=\"{:.4}\"/>",
                s.x - dx,
                s.y - dy,
                s.x + dx,
                s.y + dy,
                2.0 * SEGMENT_HALF_WIDTH,
                s.opacity
            );
        } else {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" fill=\"{color}\" fill-opacity=\"{:.4}\"/>",
                s.x, s.y, s.size, s.opacity
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
