//! Spectral parameterization: per-channel complex coefficients, scaled by
//! `1 / max(f, f0)`, inverse transformed, real part taken.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `1 / max(f, 1 / max(H, W))` for every frequency of an `H x W` grid,
/// with `f` the radial frequency in cycles per pixel.
pub fn frequency_scale(h: usize, w: usize) -> Vec<f64> {
    let f0 = 1.0 / h.max(w) as f64;
    let mut s = Vec::with_capacity(h * w);
    for ky in 0..h {
        let fy = ky.min(h - ky) as f64 / h as f64;
        for kx in 0..w {
            let fx = kx.min(w - kx) as f64 / w as f64;
            s.push(1.0 / (fy * fy + fx * fx).sqrt().max(f0));
        }
    }
    s
}

/// In-place 2-D transform of a row-major `h x w` grid; the inverse is
/// unnormalized.
pub(crate) fn fft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Spatial logits (`C x H x W`, row-major) from `C x H x W x 2` coefficients.
pub(crate) fn synthesize(coeffs: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let scale = frequency_scale(h, w);
    let norm = ((h * w) as f64).sqrt();
    let mut out = Vec::with_capacity(c * h * w);
    let mut buf = vec![Complex64::default(); h * w];
    for ch in 0..c {
        for (k, z) in buf.iter_mut().enumerate() {
            let i = 2 * (ch * h * w + k);
            *z = Complex64::new(coeffs[i], coeffs[i + 1]) * scale[k];
        }
        fft2(&mut buf, h, w, true);
        out.extend(buf.iter().map(|z| z.re / norm));
    }
    out
}

/// Coefficients whose synthesis reproduces `logits` exactly.
pub(crate) fn analyze(logits: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let scale = frequency_scale(h, w);
    let norm = ((h * w) as f64).sqrt();
    let mut out = Vec::with_capacity(2 * c * h * w);
    let mut buf = vec![Complex64::default(); h * w];
    for ch in 0..c {
        for (z, &v) in buf.iter_mut().zip(&logits[ch * h * w..][..h * w]) {
            *z = Complex64::new(v, 0.0);
        }
        fft2(&mut buf, h, w, false);
        for (z, s) in buf.iter().zip(&scale) {
            out.push(z.re / (norm * s));
            out.push(z.im / (norm * s));
        }
    }
    out
}

#[derive(Debug)]
struct Spectrum {
    c: usize,
    h: usize,
    w: usize,
}

impl<T: Real> Backward<T> for Spectrum {
    fn name(&self) -> &'static str {
        "spectrum"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let (c, h, w) = (self.c, self.h, self.w);
        let scale = frequency_scale(h, w);
        let norm = ((h * w) as f64).sqrt();
        let mut out = Vec::with_capacity(2 * c * h * w);
        let mut buf = vec![Complex64::default(); h * w];
        for ch in 0..c {
            for (z, v) in buf.iter_mut().zip(&g[ch * h * w..][..h * w]) {
                *z = Complex64::new(v.f64(), 0.0);
            }
            fft2(&mut buf, h, w, false);
            for (z, s) in buf.iter().zip(&scale) {
                out.push(T::of(z.re * s / norm));
                out.push(T::of(z.im * s / norm));
            }
        }
        vec![Some(out)]
    }
}

/// `C x H x W x 2` coefficients to `1 x C x H x W` spatial logits.
pub(crate) fn spectrum_op<T: Real>(tape: &mut Tape<T>, coeffs: Var) -> Result<Var> {
    let [c, h, w] = match *tape.shape(coeffs) {
        [c, h, w, 2] => [c, h, w],
        ref s => return Err(Error::shape("spectrum", format!("expected C x H x W x 2, got {s:?}"))),
    };
    let x: Vec<f64> = tape.value(coeffs).data().iter().map(|v| v.f64()).collect();
    let out = synthesize(&x, c, h, w).into_iter().map(T::of).collect();
    tape.record(
        Tensor::from_parts(vec![1, c, h, w], out),
        vec![coeffs],
        Box::new(Spectrum { c, h, w }),
    )
}
