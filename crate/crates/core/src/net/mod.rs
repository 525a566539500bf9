//! The recognition net: a small conv-net whose activations every objective
//! reads.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    fn label(&self) -> String {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => format!("Conv({out_channels},{kernel},{stride},{pad})"),
            LayerSpec::Relu => "ReLU".into(),
            LayerSpec::MaxPool2 => "MaxPool2".into(),
            LayerSpec::Flatten => "Flatten".into(),
            LayerSpec::Dense { out_features } => format!("Dense({out_features})"),
        }
    }
}

/// The default three-stage architecture: Conv(16)-ReLU-Pool, Conv(32)-ReLU-Pool,
/// Conv(64)-ReLU-Pool, Flatten, Dense(K).
pub fn small_net_8(num_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(16, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::conv(32, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::conv(64, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            out_features: num_classes,
        },
    ]
}

/// Per-sample output shape of every layer, validating the chain.
pub fn infer_shapes(layers: &[LayerSpec], input: [usize; 3], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let bad = |index: usize, layer: &LayerSpec, reason: String| Error::InvalidLayer {
        index,
        layer: layer.label(),
        reason,
    };
    if input.contains(&0) {
        return Err(Error::shape("net input", format!("zero-sized input {input:?}")));
    }
    let mut shape = input.to_vec();
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        shape = match (*layer, shape.as_slice()) {
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                },
                &[_, h, w],
            ) => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(bad(i, layer, "channels, kernel and stride must be positive".into()));
                }
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(bad(i, layer, format!("kernel does not fit {h}x{w} input")));
                }
                vec![
                    out_channels,
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                ]
            }
            (LayerSpec::Relu, s) => s.to_vec(),
            (LayerSpec::MaxPool2, &[c, h, w]) => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(bad(i, layer, format!("odd spatial dims {h}x{w}")));
                }
                vec![c, h / 2, w / 2]
            }
            (LayerSpec::Flatten, &[c, h, w]) => vec![c * h * w],
            (LayerSpec::Dense { out_features }, &[_]) => {
                if out_features == 0 {
                    return Err(bad(i, layer, "out_features must be positive".into()));
                }
                vec![out_features]
            }
            (_, s) => return Err(bad(i, layer, format!("cannot consume input of shape {s:?}"))),
        };
        shapes.push(shape.clone());
    }
    match layers.last() {
        Some(LayerSpec::Dense { out_features }) if *out_features == num_classes => Ok(shapes),
        Some(last) => Err(bad(
            layers.len() - 1,
            last,
            format!("pipeline must end in Dense({num_classes})"),
        )),
        None => Err(Error::Empty("layer list")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionNet {
    layers: Vec<LayerSpec>,
    params: Vec<Option<LayerParams>>,
    input: [usize; 3],
    classes: Vec<String>,
}

/// Tape handles for a net's parameters.
#[derive(Clone, Debug)]
pub struct Binding {
    params: Vec<Option<(Var, Var)>>,
}

impl Binding {
    /// `(weight, bias)` handles of every parameterized layer, in order.
    pub fn param_vars(&self) -> impl Iterator<Item = (usize, Var, Var)> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|(w, b)| (i, w, b)))
    }
}

impl RecognitionNet {
    /// Fan-in scaled Gaussian weights (std = sqrt(2 / fan_in)), zero biases.
    pub fn build(layers: Vec<LayerSpec>, input: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(&layers, input, num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let in_shape: &[usize] = if i == 0 { &input } else { &shapes[i - 1] };
            let (wshape, fan_in, out) = match *layer {
                LayerSpec::Conv {
                    out_channels, kernel, ..
                } => {
                    let c = in_shape[0];
                    (vec![out_channels, c, kernel, kernel], c * kernel * kernel, out_channels)
                }
                LayerSpec::Dense { out_features } => (vec![in_shape[0], out_features], in_shape[0], out_features),
                _ => {
                    params.push(None);
                    continue;
                }
            };
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let n: usize = wshape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            params.push(Some(LayerParams {
                weight: Tensor::new(wshape, data)?,
                bias: Tensor::zeros(&[out]),
            }));
        }
        let classes = (0..num_classes).map(|k| format!("class{k}")).collect();
        Ok(Self {
            layers,
            params,
            input,
            classes,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.classes.len() {
            return Err(Error::shape(
                "class names",
                format!("{} names for {} classes", names.len(), self.classes.len()),
            ));
        }
        self.classes = names;
        Ok(self)
    }

    pub(crate) fn from_parts(
        layers: Vec<LayerSpec>,
        params: Vec<Option<LayerParams>>,
        input: [usize; 3],
        classes: Vec<String>,
    ) -> Result<Self> {
        let shapes = infer_shapes(&layers, input, classes.len())?;
        for (i, (layer, p)) in layers.iter().zip(&params).enumerate() {
            let in_shape: &[usize] = if i == 0 { &input } else { &shapes[i - 1] };
            let expected = match *layer {
                LayerSpec::Conv {
                    out_channels, kernel, ..
                } => Some((vec![out_channels, in_shape[0], kernel, kernel], out_channels)),
                LayerSpec::Dense { out_features } => Some((vec![in_shape[0], out_features], out_features)),
                _ => None,
            };
            let ok = match (expected, p) {
                (None, None) => true,
                (Some((ws, o)), Some(p)) => p.weight.shape() == ws && p.bias.shape() == [o],
                _ => false,
            };
            if !ok {
                return Err(Error::InvalidLayer {
                    index: i,
                    layer: layer.label(),
                    reason: "parameter shapes do not match the layer".into(),
                });
            }
        }
        Ok(Self {
            layers,
            params,
            input,
            classes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    /// `(C, H, W)` of one input image.
    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn num_params(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.numel() + p.bias.numel())
            .sum()
    }

    /// Per-sample output shape of each layer.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        infer_shapes(&self.layers, self.input, self.classes.len()).expect("validated at build")
    }

    /// Indices of the layers whose output represents each conv stage: the
    /// ReLU right after a conv, or the conv itself when no ReLU follows.
    pub fn conv_stages(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| match self.layers.get(i + 1) {
                Some(LayerSpec::Relu) => i + 1,
                _ => i,
            })
            .collect()
    }

    /// Puts the parameters on `tape`, as leaves when `trainable` and as
    /// constants otherwise.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, trainable: bool) -> Binding {
        let params = self
            .params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| {
                    let (w, b) = (p.weight.cast::<T>(), p.bias.cast::<T>());
                    if trainable {
                        (tape.leaf(w), tape.leaf(b))
                    } else {
                        (tape.constant(w), tape.constant(b))
                    }
                })
            })
            .collect();
        Binding { params }
    }

    /// Records the forward pass of an `N x C x H x W` batch; returns one
    /// handle per layer (the last being the logits).
    pub fn forward_on<T: Real>(&self, tape: &mut Tape<T>, binding: &Binding, images: Var) -> Result<Vec<Var>> {
        self.check_batch_shape(tape.shape(images))?;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut x = images;
        for (i, layer) in self.layers.iter().enumerate() {
            x = match *layer {
                LayerSpec::Conv { stride, pad, .. } => {
                    let (w, b) = binding.params[i].expect("conv has params");
                    tape.conv2d(x, w, b, stride, pad)?
                }
                LayerSpec::Relu => tape.relu(x)?,
                LayerSpec::MaxPool2 => tape.max_pool2(x)?,
                LayerSpec::Flatten => {
                    let s = tape.shape(x);
                    let n = s[0];
                    let d = s[1..].iter().product();
                    tape.reshape(x, &[n, d])?
                }
                LayerSpec::Dense { .. } => {
                    let (w, b) = binding.params[i].expect("dense has params");
                    tape.affine(x, w, b)?
                }
            };
            acts.push(x);
        }
        Ok(acts)
    }

    fn check_batch_shape(&self, shape: &[usize]) -> Result<()> {
        let [c, h, w] = self.input;
        match shape {
            &[_, ic, ih, iw] if [ic, ih, iw] == [c, h, w] => Ok(()),
            other => Err(Error::shape(
                "forward",
                format!("expected N x {c} x {h} x {w} images, got {other:?}"),
            )),
        }
    }

    /// Runs a batch (`N x C x H x W`, or a single `C x H x W` image) and keeps
    /// every layer's activations. Pixels must lie in `[0, 1]`.
    pub fn forward(&self, images: &Tensor) -> Result<ActivationRecord> {
        let images = match images.shape() {
            &[c, h, w] => images.clone().reshape(&[1, c, h, w])?,
            _ => images.clone(),
        };
        self.check_batch_shape(images.shape())?;
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("pixel value {v} outside [0, 1]")));
        }
        let mut tape = Tape::<f32>::new();
        let binding = self.bind(&mut tape, false);
        let x = tape.constant(images);
        let acts = self.forward_on(&mut tape, &binding, x)?;
        let logits_var = *acts.last().expect("non-empty net");
        let probs_var = tape.softmax(logits_var)?;
        Ok(ActivationRecord {
            activations: acts.iter().map(|&v| tape.value(v).clone()).collect(),
            probs: tape.value(probs_var).clone(),
        })
    }

    /// Top-1 class for every image of a batch.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward(images)?.top1())
    }
}

/// Every layer's output for one forward call.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    activations: Vec<Tensor>,
    probs: Tensor,
}

impl ActivationRecord {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn layer(&self, index: usize) -> Option<&Tensor> {
        self.activations.get(index)
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("non-empty record")
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn top1(&self) -> Vec<usize> {
        let k = self.probs.shape()[1];
        self.logits()
            .data()
            .chunks_exact(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f32::NEG_INFINITY),
                        |best, (i, &v)| {
                            if v > best.1 {
                                (i, v)
                            } else {
                                best
                            }
                        },
                    )
                    .0
            })
            .collect()
    }
}
