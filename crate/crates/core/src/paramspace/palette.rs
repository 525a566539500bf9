//! Soft nearest-colour assignment: each pixel becomes the softmin-weighted
//! mix of palette colours, with logits `-|p - c_j|^2 / (SHARPNESS * T)`.

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Squared-distance scale at temperature 1.
pub const SHARPNESS: f64 = 0.1;

#[derive(Debug)]
struct Assign {
    tau: f64,
    /// Per pixel, per colour weights (`HW x K`).
    weights: Vec<f64>,
}

fn soft_weights(image: &[f64], colors: &[f64], c: usize, hw: usize, tau: f64) -> Vec<f64> {
    let k = colors.len() / c;
    let mut out = Vec::with_capacity(hw * k);
    let mut logits = vec![0.0; k];
    for p in 0..hw {
        for (j, l) in logits.iter_mut().enumerate() {
            let d2: f64 = (0..c).map(|ch| (image[ch * hw + p] - colors[j * c + ch]).powi(2)).sum();
            *l = -d2 / tau;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        out.extend(logits.iter().map(|l| (l - m).exp() / z));
    }
    out
}

impl<T: Real> Backward<T> for Assign {
    fn name(&self) -> &'static str {
        "palette_assign"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let image: Vec<f64> = inputs[0].data().iter().map(|v| v.f64()).collect();
        let colors: Vec<f64> = inputs[1].data().iter().map(|v| v.f64()).collect();
        let out: Vec<f64> = output.data().iter().map(|v| v.f64()).collect();
        let c = inputs[1].shape()[1];
        let k = colors.len() / c;
        let hw = image.len() / c;
        let mut dimg = vec![0.0; image.len()];
        let mut dcol = vec![0.0; colors.len()];
        for p in 0..hw {
            let gp: Vec<f64> = (0..c).map(|ch| g[ch * hw + p].f64()).collect();
            let g_out: f64 = (0..c).map(|ch| gp[ch] * out[ch * hw + p]).sum();
            for j in 0..k {
                let wj = self.weights[p * k + j];
                let g_col: f64 = (0..c).map(|ch| gp[ch] * colors[j * c + ch]).sum();
                let dl = wj * (g_col - g_out);
                for ch in 0..c {
                    let diff = image[ch * hw + p] - colors[j * c + ch];
                    dimg[ch * hw + p] -= dl * 2.0 * diff / self.tau;
                    dcol[j * c + ch] += wj * gp[ch] + dl * 2.0 * diff / self.tau;
                }
            }
        }
        let wrap = |v: Vec<f64>, need: bool| need.then(|| v.into_iter().map(T::of).collect());
        vec![wrap(dimg, needs[0]), wrap(dcol, needs[1])]
    }
}

/// `image` is `1 x C x H x W`, `colors` is `K x C`.
pub(crate) fn assign_op<T: Real>(tape: &mut Tape<T>, image: Var, colors: Var, temperature: f64) -> Result<Var> {
    let (c, hw) = match *tape.shape(image) {
        [1, c, h, w] => (c, h * w),
        ref s => return Err(Error::shape("palette_assign", format!("image {s:?}"))),
    };
    if tape.shape(colors).len() != 2 || tape.shape(colors)[1] != c {
        return Err(Error::shape(
            "palette_assign",
            format!("colors {:?} for {c} channels", tape.shape(colors)),
        ));
    }
    let tau = SHARPNESS * temperature;
    let img: Vec<f64> = tape.value(image).data().iter().map(|v| v.f64()).collect();
    let col: Vec<f64> = tape.value(colors).data().iter().map(|v| v.f64()).collect();
    let k = col.len() / c;
    let weights = soft_weights(&img, &col, c, hw, tau);
    let mut out = vec![T::ZERO; img.len()];
    for p in 0..hw {
        for ch in 0..c {
            let v: f64 = (0..k).map(|j| weights[p * k + j] * col[j * c + ch]).sum();
            out[ch * hw + p] = T::of(v);
        }
    }
    let shape = tape.shape(image).to_vec();
    tape.record(
        Tensor::from_parts(shape, out),
        vec![image, colors],
        Box::new(Assign { tau, weights }),
    )
}

/// Index of the nearest colour for each pixel of a `C x HW` image; ties go to
/// the lower index.
pub(crate) fn nearest(image: &[f32], colors: &[f32], c: usize) -> Vec<usize> {
    let hw = image.len() / c;
    let k = colors.len() / c;
    (0..hw)
        .map(|p| {
            (0..k)
                .map(|j| {
                    let d: f64 = (0..c)
                        .map(|ch| (image[ch * hw + p] as f64 - colors[j * c + ch] as f64).powi(2))
                        .sum();
                    (j, d)
                })
                .fold((0, f64::INFINITY), |b, (j, d)| if d < b.1 { (j, d) } else { b })
                .0
        })
        .collect()
}
