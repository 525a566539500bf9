//! Differentiable primitives. Reductions accumulate in `f64` regardless of
//! the storage type.

use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        other => Err(Error::shape(op, format!("expected NCHW input, got {other:?}"))),
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("operand shapes differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Output index range `[lo, hi)` whose input coordinate `o*stride + k - pad`
/// falls inside `[0, len)`.
#[inline]
fn valid_range(len: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct Conv2d {
    stride: usize,
    pad: usize,
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(x: &[usize], wt: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = dims4("conv2d", x)?;
        let &[o, wc, kh, kw] = wt else {
            return Err(Error::shape("conv2d", format!("weights must be OIKK, got {wt:?}")));
        };
        if wc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {c} != weight input channels {wc}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        if b != [o] {
            return Err(Error::shape("conv2d", format!("bias shape {b:?} != [{o}]")));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh} does not fit padded input height {h} width {w} pad {pad}"),
            ));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            k: kh,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }
}

/// Unfolds one `C x H x W` image into a `(C K K) x (OH OW)` matrix; padding
/// reads as zero.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [f64]) {
    let ConvGeom {
        c,
        h,
        w,
        k,
        oh,
        ow,
        stride,
        pad,
        ..
    } = *g;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..][..h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(h, oh, ky, stride, pad);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(w, ow, kx, stride, pad);
                let dst = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                dst.iter_mut().for_each(|v| *v = 0.0);
                for oy in y_lo..y_hi {
                    let row = &plane[(oy * stride + ky - pad) * w..][..w];
                    let d = &mut dst[oy * ow..][..ow];
                    for ox in x_lo..x_hi {
                        d[ox] = row[ox * stride + kx - pad].f64();
                    }
                }
            }
        }
    }
}

/// Adds a `(C K K) x (OH OW)` matrix back onto a `C x H x W` image.
fn col2im(g: &ConvGeom, cols: &[f64], acc: &mut [f64]) {
    let ConvGeom {
        c,
        h,
        w,
        k,
        oh,
        ow,
        stride,
        pad,
        ..
    } = *g;
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut acc[ci * h * w..][..h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(h, oh, ky, stride, pad);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(w, ow, kx, stride, pad);
                let src = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in y_lo..y_hi {
                    let row = &mut plane[(oy * stride + ky - pad) * w..][..w];
                    let s = &src[oy * ow..][..ow];
                    for ox in x_lo..x_hi {
                        row[ox * stride + kx - pad] += s[ox];
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major f64 matrices, where
/// `op` optionally transposes; `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, kd: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (kd as isize, 1) };
    let (rsb, csb) = if tb { (1, kd as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * kd && b.len() >= kd * n && c.len() >= m * n);
    // SAFETY: the slices hold at least the extents implied by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            kd,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], wt: &[T], b: &[T]) -> Vec<T> {
    let ConvGeom {
        n,
        c,
        h,
        w,
        o,
        k,
        oh,
        ow,
        ..
    } = *g;
    let (p, ckk) = (oh * ow, c * k * k);
    let wf: Vec<f64> = wt.iter().map(|v| v.f64()).collect();
    let mut cols = vec![0f64; ckk * p];
    let mut acc = vec![0f64; o * p];
    let mut out = Vec::with_capacity(n * o * p);
    for ni in 0..n {
        im2col(g, &x[ni * c * h * w..][..c * h * w], &mut cols);
        for (oi, row) in acc.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|a| *a = b[oi].f64());
        }
        gemm(o, ckk, p, &wf, false, &cols, false, 1.0, &mut acc);
        out.extend(acc.iter().map(|&v| T::of(v)));
    }
    out
}

impl<T: Real> Backward<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, wt) = (inputs[0], inputs[1]);
        let g = ConvGeom::new(x.shape(), wt.shape(), inputs[2].shape(), self.stride, self.pad)
            .expect("validated in forward");
        let ConvGeom {
            n,
            c,
            h,
            w,
            o,
            k,
            oh,
            ow,
            ..
        } = g;
        let (p, ckk) = (oh * ow, c * k * k);
        let wf: Vec<f64> = wt.data().iter().map(|v| v.f64()).collect();
        let gf: Vec<f64> = grad.iter().map(|v| v.f64()).collect();

        let mut cols = vec![0f64; ckk * p];
        let mut gx = needs[0].then(|| Vec::with_capacity(x.numel()));
        let mut gw = needs[1].then(|| vec![0f64; o * ckk]);
        let mut img = vec![0f64; c * h * w];
        for ni in 0..n {
            let gi = &gf[ni * o * p..][..o * p];
            if let Some(gw) = gw.as_mut() {
                im2col(&g, &x.data()[ni * c * h * w..][..c * h * w], &mut cols);
                gemm(o, p, ckk, gi, false, &cols, true, 1.0, gw);
            }
            if let Some(gx) = gx.as_mut() {
                gemm(ckk, o, p, &wf, true, gi, false, 0.0, &mut cols);
                img.iter_mut().for_each(|v| *v = 0.0);
                col2im(&g, &cols, &mut img);
                gx.extend(img.iter().map(|&v| T::of(v)));
            }
        }

        let gb = needs[2].then(|| {
            (0..o)
                .map(|oi| {
                    let s: f64 = (0..n).flat_map(|ni| gf[(ni * o + oi) * p..][..p].iter()).sum();
                    T::of(s)
                })
                .collect()
        });

        vec![gx, gw.map(|v| v.into_iter().map(T::of).collect()), gb]
    }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct MaxPool2 {
    /// Flat input index of the winner for each output element.
    argmax: Vec<usize>,
}

impl<T: Real> Backward<T> for MaxPool2 {
    fn name(&self) -> &'static str {
        "max_pool2"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::ZERO; inputs[0].numel()];
        for (&src, &g) in self.argmax.iter().zip(grad) {
            gx[src] += g;
        }
        vec![Some(gx)]
    }
}

// ---------------------------------------------------------------------------
// affine
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct Affine;

impl<T: Real> Backward<T> for Affine {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, wt) = (inputs[0], inputs[1]);
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let m = wt.shape()[1];
        let (xd, wd) = (x.data(), wt.data());
        let gx = needs[0].then(|| {
            let mut gx = Vec::with_capacity(n * d);
            for ni in 0..n {
                let grow = &grad[ni * m..][..m];
                for di in 0..d {
                    let wrow = &wd[di * m..][..m];
                    let s: f64 = grow.iter().zip(wrow).map(|(g, w)| g.f64() * w.f64()).sum();
                    gx.push(T::of(s));
                }
            }
            gx
        });
        let gw = needs[1].then(|| {
            let mut acc = vec![0f64; d * m];
            for ni in 0..n {
                let grow = &grad[ni * m..][..m];
                for di in 0..d {
                    let xv = xd[ni * d + di].f64();
                    for (a, g) in acc[di * m..][..m].iter_mut().zip(grow) {
                        *a += xv * g.f64();
                    }
                }
            }
            acc.into_iter().map(T::of).collect()
        });
        let gb = needs[2].then(|| {
            (0..m)
                .map(|mi| T::of((0..n).map(|ni| grad[ni * m + mi].f64()).sum()))
                .collect()
        });
        vec![gx, gw, gb]
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Square,
    Abs,
    Sigmoid,
    Scale(f64),
}

impl<T: Real> Backward<T> for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Square => "square",
            Unary::Abs => "abs",
            Unary::Sigmoid => "sigmoid",
            Unary::Scale(_) => "scale",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let y = output.data();
        let g: Vec<T> = match *self {
            // Subgradient 0 at the kink.
            Unary::Relu => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO })
                .collect(),
            Unary::Square => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| T::of(2.0 * v.f64() * g.f64()))
                .collect(),
            Unary::Abs => x
                .iter()
                .zip(grad)
                .map(|(&v, &g)| {
                    if v > T::ZERO {
                        g
                    } else if v < T::ZERO {
                        -g
                    } else {
                        T::ZERO
                    }
                })
                .collect(),
            Unary::Sigmoid => y
                .iter()
                .zip(grad)
                .map(|(&s, &g)| {
                    let s = s.f64();
                    T::of(s * (1.0 - s) * g.f64())
                })
                .collect(),
            Unary::Scale(c) => grad.iter().map(|&g| T::of(c * g.f64())).collect(),
        };
        vec![Some(g)]
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Real> Backward<T> for Binary {
    fn name(&self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        match self {
            Binary::Add => vec![needs[0].then(|| grad.to_vec()), needs[1].then(|| grad.to_vec())],
            Binary::Sub => vec![
                needs[0].then(|| grad.to_vec()),
                needs[1].then(|| grad.iter().map(|&g| -g).collect()),
            ],
            Binary::Mul => {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                vec![
                    needs[0].then(|| b.iter().zip(grad).map(|(&v, &g)| v * g).collect()),
                    needs[1].then(|| a.iter().zip(grad).map(|(&v, &g)| v * g).collect()),
                ]
            }
        }
    }
}

// ---------------------------------------------------------------------------
// reductions and selection
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum Reduce {
    Sum,
    Mean,
    Select(usize),
    /// Mean over N, H, W of one channel of an NCHW tensor.
    ChannelMean(usize),
}

impl<T: Real> Backward<T> for Reduce {
    fn name(&self) -> &'static str {
        match self {
            Reduce::Sum => "sum",
            Reduce::Mean => "mean",
            Reduce::Select(_) => "select",
            Reduce::ChannelMean(_) => "channel_mean",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let numel = x.numel();
        let g = grad[0];
        let out = match *self {
            Reduce::Sum => vec![g; numel],
            Reduce::Mean => vec![T::of(g.f64() / numel as f64); numel],
            Reduce::Select(i) => {
                let mut v = vec![T::ZERO; numel];
                v[i] = g;
                v
            }
            Reduce::ChannelMean(ch) => {
                let [n, c, h, w] = dims4("channel_mean", x.shape()).expect("validated");
                let share = T::of(g.f64() / (n * h * w) as f64);
                let mut v = vec![T::ZERO; numel];
                for ni in 0..n {
                    v[(ni * c + ch) * h * w..][..h * w].fill(share);
                }
                v
            }
        };
        vec![Some(out)]
    }
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut probs = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        probs.extend(exps.iter().map(|e| e / total));
    }
    probs
}

#[derive(Debug)]
struct SoftmaxCrossEntropy {
    labels: Vec<usize>,
    probs: Vec<f64>,
}

impl<T: Real> Backward<T> for SoftmaxCrossEntropy {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let k = inputs[0].shape()[1];
        let n = self.labels.len();
        let scale = grad[0].f64() / n as f64;
        let g = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let onehot = if self.labels[i / k] == i % k { 1.0 } else { 0.0 };
                T::of((p - onehot) * scale)
            })
            .collect();
        vec![Some(g)]
    }
}

#[derive(Debug)]
struct Softmax;

impl<T: Real> Backward<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let k = inputs[0].shape()[1];
        let mut g = Vec::with_capacity(grad.len());
        for (p, gr) in output.data().chunks_exact(k).zip(grad.chunks_exact(k)) {
            let dot: f64 = p.iter().zip(gr).map(|(a, b)| a.f64() * b.f64()).sum();
            g.extend(p.iter().zip(gr).map(|(a, b)| T::of(a.f64() * (b.f64() - dot))));
        }
        vec![Some(g)]
    }
}

// ---------------------------------------------------------------------------
// Gram matrix and total variation
// ---------------------------------------------------------------------------

/// Channel correlations of a `C x P` activation map, divided by `C * P`.
pub fn gram_kernel<T: Real>(x: &[T], c: usize, p: usize) -> Vec<f64> {
    let norm = (c * p) as f64;
    let mut g = vec![0f64; c * c];
    for a in 0..c {
        let ra = &x[a * p..][..p];
        for b in a..c {
            let rb = &x[b * p..][..p];
            let s: f64 = ra.iter().zip(rb).map(|(u, v)| u.f64() * v.f64()).sum();
            g[a * c + b] = s / norm;
            g[b * c + a] = s / norm;
        }
    }
    g
}

#[derive(Debug)]
struct Gram;

impl<T: Real> Backward<T> for Gram {
    fn name(&self) -> &'static str {
        "gram"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let s = x.shape();
        let c = s[s.len() - 3];
        let p = s[s.len() - 2] * s[s.len() - 1];
        let norm = (c * p) as f64;
        let xd = x.data();
        let mut gx = vec![0f64; c * p];
        for a in 0..c {
            for b in 0..c {
                let coef = (grad[a * c + b].f64() + grad[b * c + a].f64()) / norm;
                if coef == 0.0 {
                    continue;
                }
                let rb = &xd[b * p..][..p];
                for (dst, v) in gx[a * p..][..p].iter_mut().zip(rb) {
                    *dst += coef * v.f64();
                }
            }
        }
        vec![Some(gx.into_iter().map(T::of).collect())]
    }
}

#[derive(Debug)]
struct TotalVariation;

/// Anisotropic total variation of the trailing H x W planes: the mean absolute
/// vertical difference plus the mean absolute horizontal difference. An empty
/// difference set contributes zero.
fn tv_parts(shape: &[usize]) -> (usize, usize, usize) {
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let planes: usize = shape[..shape.len() - 2].iter().product();
    (planes, h, w)
}

fn tv_value<T: Real>(x: &[T], shape: &[usize]) -> f64 {
    let (planes, h, w) = tv_parts(shape);
    let (mut sv, mut sh) = (0f64, 0f64);
    for pl in 0..planes {
        let d = &x[pl * h * w..][..h * w];
        for i in 0..h {
            for j in 0..w {
                let v = d[i * w + j].f64();
                if i + 1 < h {
                    sv += (d[(i + 1) * w + j].f64() - v).abs();
                }
                if j + 1 < w {
                    sh += (d[i * w + j + 1].f64() - v).abs();
                }
            }
        }
    }
    let nv = planes * h.saturating_sub(1) * w;
    let nh = planes * h * w.saturating_sub(1);
    let mv = if nv > 0 { sv / nv as f64 } else { 0.0 };
    let mh = if nh > 0 { sh / nh as f64 } else { 0.0 };
    mv + mh
}

impl<T: Real> Backward<T> for TotalVariation {
    fn name(&self) -> &'static str {
        "total_variation"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let (planes, h, w) = tv_parts(x.shape());
        let nv = planes * h.saturating_sub(1) * w;
        let nh = planes * h * w.saturating_sub(1);
        let cv = if nv > 0 { grad[0].f64() / nv as f64 } else { 0.0 };
        let ch = if nh > 0 { grad[0].f64() / nh as f64 } else { 0.0 };
        let sign = |d: f64| {
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        };
        let xd = x.data();
        let mut g = vec![0f64; x.numel()];
        for pl in 0..planes {
            let base = pl * h * w;
            for i in 0..h {
                for j in 0..w {
                    let at = base + i * w + j;
                    if i + 1 < h {
                        let s = sign(xd[at + w].f64() - xd[at].f64()) * cv;
                        g[at + w] += s;
                        g[at] -= s;
                    }
                    if j + 1 < w {
                        let s = sign(xd[at + 1].f64() - xd[at].f64()) * ch;
                        g[at + 1] += s;
                        g[at] -= s;
                    }
                }
            }
        }
        vec![Some(g.into_iter().map(T::of).collect())]
    }
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct Reshape;

impl<T: Real> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec())]
    }
}

/// Circular shift of the two trailing (spatial) axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shift {
    pub dy: isize,
    pub dx: isize,
}

fn roll_planes<T: Real>(x: &[T], planes: usize, h: usize, w: usize, dy: isize, dx: isize) -> Vec<T> {
    let mut out = vec![T::ZERO; x.len()];
    let sy = dy.rem_euclid(h as isize) as usize;
    let sx = dx.rem_euclid(w as isize) as usize;
    for pl in 0..planes {
        let src = &x[pl * h * w..][..h * w];
        let dst = &mut out[pl * h * w..][..h * w];
        for i in 0..h {
            let ti = (i + sy) % h;
            for j in 0..w {
                dst[ti * w + (j + sx) % w] = src[i * w + j];
            }
        }
    }
    out
}

impl<T: Real> Backward<T> for Shift {
    fn name(&self) -> &'static str {
        "roll"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (planes, h, w) = tv_parts(inputs[0].shape());
        vec![Some(roll_planes(grad, planes, h, w, -self.dy, -self.dx))]
    }
}

#[derive(Debug)]
struct Upsample {
    factor: usize,
}

impl<T: Real> Backward<T> for Upsample {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (planes, h, w) = tv_parts(inputs[0].shape());
        let f = self.factor;
        let (oh, ow) = (h * f, w * f);
        let mut g = vec![0f64; planes * h * w];
        for pl in 0..planes {
            for i in 0..oh {
                for j in 0..ow {
                    g[pl * h * w + (i / f) * w + j / f] += grad[pl * oh * ow + i * ow + j].f64();
                }
            }
        }
        vec![Some(g.into_iter().map(T::of).collect())]
    }
}

#[derive(Debug)]
struct RepeatChannels {
    channels: usize,
}

impl<T: Real> Backward<T> for RepeatChannels {
    fn name(&self) -> &'static str {
        "repeat_channels"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T], _needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let [n, _, h, w] = dims4("repeat_channels", inputs[0].shape()).expect("validated");
        let hw = h * w;
        let c = self.channels;
        let mut g = Vec::with_capacity(n * hw);
        for ni in 0..n {
            for p in 0..hw {
                let s: f64 = (0..c).map(|ci| grad[(ni * c + ci) * hw + p].f64()).sum();
                g.push(T::of(s));
            }
        }
        vec![Some(g)]
    }
}

// ---------------------------------------------------------------------------
// forward API
// ---------------------------------------------------------------------------

impl<T: Real> Tape<T> {
    /// Cross-correlation (no kernel flip) of an NCHW input with OIKK weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let g = ConvGeom::new(self.shape(x), self.shape(w), self.shape(b), stride, pad)?;
        let out = conv_forward(&g, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let value = Tensor::from_parts(vec![g.n, g.o, g.oh, g.ow], out);
        self.record(value, vec![x, w, b], Box::new(Conv2d { stride, pad }))
    }

    /// 2x2 max pooling with stride 2. Ties go to the first element in
    /// row-major order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4("max_pool2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "max_pool2",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for pl in 0..n * c {
            let base = pl * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, oh, ow], out);
        self.record(value, vec![x], Box::new(MaxPool2 { argmax }))
    }

    /// `x · w + b` for `x: N x D`, `w: D x M`, `b: M`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (&[n, d], &[wd, m]) = (xs, ws) else {
            return Err(Error::shape(
                "affine",
                format!("expected N x D input and D x M weights, got {xs:?} and {ws:?}"),
            ));
        };
        if d != wd {
            return Err(Error::shape("affine", format!("inner dims differ: {d} vs {wd}")));
        }
        if bs != [m] {
            return Err(Error::shape("affine", format!("bias shape {bs:?} != [{m}]")));
        }
        let (xd, wdat, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * m);
        let mut acc = vec![0f64; m];
        for ni in 0..n {
            acc.iter_mut().zip(bd).for_each(|(a, b)| *a = b.f64());
            for di in 0..d {
                let xv = xd[ni * d + di].f64();
                for (a, wv) in acc.iter_mut().zip(&wdat[di * m..][..m]) {
                    *a += xv * wv.f64();
                }
            }
            out.extend(acc.iter().map(|&v| T::of(v)));
        }
        self.record(Tensor::from_parts(vec![n, m], out), vec![x, w, b], Box::new(Affine))
    }

    fn unary(&mut self, x: Var, op: Unary, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x);
        let data = value.data().iter().map(|v| T::of(f(v.f64()))).collect();
        let shape = value.shape().to_vec();
        self.record(Tensor::from_parts(shape, data), vec![x], Box::new(op))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu, |v| v.max(0.0))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square, |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs, f64::abs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid, sigmoid)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Unary::Scale(c), |v| c * v)
    }

    fn binary(&mut self, a: Var, b: Var, op: Binary, f: impl Fn(T, T) -> T) -> Result<Var> {
        let name = <Binary as Backward<T>>::name(&op);
        same_shape(name, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&u, &v)| f(u, v))
            .collect();
        let shape = self.shape(a).to_vec();
        self.record(Tensor::from_parts(shape, data), vec![a, b], Box::new(op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, |u, v| u + v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, |u, v| u - v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, |u, v| u * v)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        self.record(Tensor::scalar(T::of(s)), vec![x], Box::new(Reduce::Sum))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s: f64 = v.data().iter().map(|v| v.f64()).sum::<f64>() / v.numel() as f64;
        self.record(Tensor::scalar(T::of(s)), vec![x], Box::new(Reduce::Mean))
    }

    /// The element at flat (row-major) index `index`, as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x);
        let Some(&item) = v.data().get(index) else {
            return Err(Error::OutOfRange(format!(
                "select index {index} in tensor of {} elements",
                v.numel()
            )));
        };
        self.record(Tensor::scalar(item), vec![x], Box::new(Reduce::Select(index)))
    }

    pub fn channel_mean(&mut self, x: Var, channel: usize) -> Result<Var> {
        let [n, c, h, w] = dims4("channel_mean", self.shape(x))?;
        if channel >= c {
            return Err(Error::OutOfRange(format!("channel {channel} of {c}")));
        }
        let d = self.value(x).data();
        let s: f64 = (0..n)
            .flat_map(|ni| d[(ni * c + channel) * h * w..][..h * w].iter())
            .map(|v| v.f64())
            .sum();
        let mean = s / (n * h * w) as f64;
        self.record(
            Tensor::scalar(T::of(mean)),
            vec![x],
            Box::new(Reduce::ChannelMean(channel)),
        )
    }

    /// Row-wise softmax of `N x K` logits.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let &[_, k] = self.shape(logits) else {
            return Err(Error::shape(
                "softmax",
                format!("expected N x K, got {:?}", self.shape(logits)),
            ));
        };
        let z: Vec<f64> = self.value(logits).data().iter().map(|v| v.f64()).collect();
        let probs = softmax_rows(&z, k).into_iter().map(T::of).collect();
        let shape = self.shape(logits).to_vec();
        self.record(Tensor::from_parts(shape, probs), vec![logits], Box::new(Softmax))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `N x K` logits. Returns the scalar loss and the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<T>)> {
        let &[n, k] = self.shape(logits) else {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("expected N x K logits, got {:?}", self.shape(logits)),
            ));
        };
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::OutOfRange(format!("label {bad} with {k} classes")));
        }
        let z: Vec<f64> = self.value(logits).data().iter().map(|v| v.f64()).collect();
        let mut loss = 0f64;
        for (row, &label) in z.chunks_exact(k).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        loss /= n as f64;
        let probs = softmax_rows(&z, k);
        let probs_t = Tensor::from_parts(vec![n, k], probs.iter().map(|&p| T::of(p)).collect());
        let var = self.record(
            Tensor::scalar(T::of(loss)),
            vec![logits],
            Box::new(SoftmaxCrossEntropy {
                labels: labels.to_vec(),
                probs,
            }),
        )?;
        Ok((var, probs_t))
    }

    /// Gram matrix `C x C` of a single `[1,] C x H x W` activation, normalized
    /// by `C * H * W`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let (c, p) = match *s {
            [1, c, h, w] | [c, h, w] => (c, h * w),
            _ => return Err(Error::shape("gram", format!("expected [1,]CxHxW, got {s:?}"))),
        };
        let g = gram_kernel(self.value(x).data(), c, p);
        let value = Tensor::from_parts(vec![c, c], g.into_iter().map(T::of).collect());
        self.record(value, vec![x], Box::new(Gram))
    }

    pub fn total_variation(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(Error::shape("total_variation", format!("need spatial axes, got {s:?}")));
        }
        let v = tv_value(self.value(x).data(), s);
        self.record(Tensor::scalar(T::of(v)), vec![x], Box::new(TotalVariation))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.record(value, vec![x], Box::new(Reshape))
    }

    /// Circularly shifts the spatial axes by `(dy, dx)`.
    pub fn roll(&mut self, x: Var, dy: isize, dx: isize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(Error::shape("roll", format!("need spatial axes, got {s:?}")));
        }
        let (planes, h, w) = tv_parts(s);
        let data = roll_planes(self.value(x).data(), planes, h, w, dy, dx);
        let shape = s.to_vec();
        self.record(Tensor::from_parts(shape, data), vec![x], Box::new(Shift { dy, dx }))
    }

    /// Nearest-neighbour upsampling of the spatial axes by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || factor == 0 {
            return Err(Error::shape("upsample_nearest", format!("shape {s:?} factor {factor}")));
        }
        let (planes, h, w) = tv_parts(&s);
        let (oh, ow) = (h * factor, w * factor);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            for i in 0..oh {
                for j in 0..ow {
                    out.push(d[pl * h * w + (i / factor) * w + j / factor]);
                }
            }
        }
        let mut shape = s;
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        self.record(Tensor::from_parts(shape, out), vec![x], Box::new(Upsample { factor }))
    }

    /// Broadcasts a single-channel NCHW tensor to `channels` channels.
    pub fn repeat_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let [n, c, h, w] = dims4("repeat_channels", self.shape(x))?;
        if c != 1 {
            return Err(Error::shape("repeat_channels", format!("expected 1 channel, got {c}")));
        }
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(n * channels * h * w);
        for ni in 0..n {
            for _ in 0..channels {
                out.extend_from_slice(&d[ni * h * w..][..h * w]);
            }
        }
        self.record(
            Tensor::from_parts(vec![n, channels, h, w], out),
            vec![x],
            Box::new(RepeatChannels { channels }),
        )
    }
}
