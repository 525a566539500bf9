//! Scalar objectives over an image and the recognition net's activations,
//! and their weighted composition.
//!
//! Losses are normalized: content and style distances are mean squared
//! differences, Gram matrices are divided by `C * H * W`, and the layer
//! energy used for deep dream is divided by the neuron count. This keeps
//! weights comparable across layers of different sizes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{gram_kernel, Tape, Var};
use crate::error::{Error, Result};
use crate::net::RecognitionNet;
use crate::tensor::{Real, Tensor};

/// Channel correlation matrix of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub channels: usize,
    /// Row-major `C x C`.
    pub values: Vec<f64>,
    /// The divisor applied to the raw correlations, `C * H * W`.
    pub norm: f64,
}

impl GramMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.channels + b]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.channels],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("finite gram")
    }
}

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] | [1, c, h, w] => Ok((c, h, w)),
        ref other => Err(Error::shape(op, format!("expected [1,]C x H x W, got {other:?}"))),
    }
}

/// `G[a,b] = sum_hw act[a,h,w] act[b,h,w] / (C H W)`.
pub fn gram(activation: &Tensor) -> Result<GramMatrix> {
    let (c, h, w) = chw("gram", activation.shape())?;
    Ok(GramMatrix {
        channels: c,
        values: gram_kernel(activation.data(), c, h * w),
        norm: (c * h * w) as f64,
    })
}

/// Requested layers' activations for one image, from a single forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    layers: BTreeMap<usize, Tensor>,
}

impl Representation {
    pub fn get(&self, layer: usize) -> Option<&Tensor> {
        self.layers.get(&layer)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.layers.iter().map(|(&k, v)| (k, v))
    }

    pub fn from_layers(layers: impl IntoIterator<Item = (usize, Tensor)>) -> Self {
        Self {
            layers: layers.into_iter().collect(),
        }
    }
}

fn check_layer(net: &RecognitionNet, layer: usize) -> Result<()> {
    if layer >= net.layers().len() {
        return Err(Error::OutOfRange(format!(
            "layer {layer} of a {}-layer net",
            net.layers().len()
        )));
    }
    Ok(())
}

fn as_batch(image: &Tensor) -> Result<Tensor> {
    match *image.shape() {
        [c, h, w] => image.clone().reshape(&[1, c, h, w]),
        [1, _, _, _] => Ok(image.clone()),
        ref other => Err(Error::shape(
            "image",
            format!("expected one C x H x W image, got {other:?}"),
        )),
    }
}

pub fn representation(net: &RecognitionNet, image: &Tensor, layers: &[usize]) -> Result<Representation> {
    for &l in layers {
        check_layer(net, l)?;
    }
    let record = net.forward(&as_batch(image)?)?;
    Ok(Representation {
        layers: layers
            .iter()
            .map(|&l| (l, record.layer(l).expect("checked").clone()))
            .collect(),
    })
}

/// Mean squared difference between two representations at `layer`.
pub fn content_loss(x: &Representation, target: &Representation, layer: usize) -> Result<f64> {
    let (a, b) = match (x.get(layer), target.get(layer)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::OutOfRange(format!("layer {layer} missing from representation"))),
    };
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "content_loss",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&u, &v)| (u as f64 - v as f64).powi(2))
        .sum();
    Ok(s / a.numel() as f64)
}

/// Target Gram matrices per layer, with non-negative weights.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleSignature {
    pub layers: Vec<(usize, GramMatrix, f64)>,
}

impl StyleSignature {
    /// Gram matrices of `image` at `layers`, all weighted equally at 1 / L.
    pub fn from_image(net: &RecognitionNet, image: &Tensor, layers: &[usize]) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("style layers"));
        }
        let rep = representation(net, image, layers)?;
        let w = 1.0 / layers.len() as f64;
        let layers = layers
            .iter()
            .map(|&l| Ok((l, gram(rep.get(l).expect("requested"))?, w)))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.layers.len() || weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(
                "style weights must be finite, >= 0 and one per layer".into(),
            ));
        }
        self.layers.iter_mut().zip(weights).for_each(|(l, &w)| l.2 = w);
        Ok(self)
    }

    fn validate(&self, net: &RecognitionNet) -> Result<()> {
        let shapes = net.layer_shapes();
        for (l, g, w) in &self.layers {
            check_layer(net, *l)?;
            let s = &shapes[*l];
            if s.len() != 3 || s[0] != g.channels {
                return Err(Error::shape(
                    "style signature",
                    format!("layer {l} has shape {s:?}, gram has {} channels", g.channels),
                ));
            }
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("style weight {w} for layer {l}")));
            }
        }
        Ok(())
    }
}

/// `sum_l weight_l * mean((G_l(image) - G_l^target)^2)`.
pub fn style_loss(image: &Tensor, signature: &StyleSignature, net: &RecognitionNet) -> Result<f64> {
    signature.validate(net)?;
    let layers: Vec<usize> = signature.layers.iter().map(|l| l.0).collect();
    let rep = representation(net, image, &layers)?;
    let mut total = 0.0;
    for (l, target, w) in &signature.layers {
        let g = gram(rep.get(*l).expect("requested"))?;
        let ms = g
            .values
            .iter()
            .zip(&target.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / g.values.len() as f64;
        total += w * ms;
    }
    Ok(total)
}

/// Mean absolute vertical plus mean absolute horizontal neighbour difference.
pub fn total_variation(image: &Tensor) -> Result<f64> {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(image.clone());
    let tv = tape.total_variation(x)?;
    Ok(tape.value(tv).data()[0] as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveTerm {
    ClassProbability {
        class: usize,
    },
    ClassLogit {
        class: usize,
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
    /// Mean squared activation of a whole layer.
    LayerL2 {
        layer: usize,
    },
    ContentLoss {
        layer: usize,
        target: Tensor,
    },
    StyleLoss {
        signature: StyleSignature,
    },
    TotalVariation,
    /// Squared Euclidean distance to a reference image.
    L2Distance {
        reference: Tensor,
    },
}

impl ObjectiveTerm {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveTerm::ClassProbability { .. } => "class_probability",
            ObjectiveTerm::ClassLogit { .. } => "class_logit",
            ObjectiveTerm::Neuron { .. } => "neuron",
            ObjectiveTerm::ChannelMean { .. } => "channel_mean",
            ObjectiveTerm::LayerL2 { .. } => "layer_l2",
            ObjectiveTerm::ContentLoss { .. } => "content_loss",
            ObjectiveTerm::StyleLoss { .. } => "style_loss",
            ObjectiveTerm::TotalVariation => "total_variation",
            ObjectiveTerm::L2Distance { .. } => "l2_distance",
        }
    }

    /// Content target from an image's activations at `layer`.
    pub fn content_from_image(net: &RecognitionNet, image: &Tensor, layer: usize) -> Result<Self> {
        let rep = representation(net, image, &[layer])?;
        Ok(ObjectiveTerm::ContentLoss {
            layer,
            target: rep.get(layer).expect("requested").clone(),
        })
    }

    fn uses_net(&self) -> bool {
        !matches!(self, ObjectiveTerm::TotalVariation | ObjectiveTerm::L2Distance { .. })
    }

    /// Whether the term reads a unit's activation (as opposed to a loss).
    pub fn is_activation(&self) -> bool {
        matches!(
            self,
            ObjectiveTerm::Neuron { .. }
                | ObjectiveTerm::ChannelMean { .. }
                | ObjectiveTerm::LayerL2 { .. }
                | ObjectiveTerm::ClassLogit { .. }
                | ObjectiveTerm::ClassProbability { .. }
        )
    }

    pub fn validate(&self, net: &RecognitionNet) -> Result<()> {
        let shapes = net.layer_shapes();
        let k = net.num_classes();
        match self {
            ObjectiveTerm::ClassProbability { class } | ObjectiveTerm::ClassLogit { class } => {
                if *class >= k {
                    return Err(Error::OutOfRange(format!("class {class} of {k}")));
                }
            }
            ObjectiveTerm::Neuron { layer, channel, y, x } => {
                check_layer(net, *layer)?;
                let ok = match *shapes[*layer].as_slice() {
                    [c, h, w] => channel < &c && y < &h && x < &w,
                    [d] => channel < &d && *y == 0 && *x == 0,
                    _ => false,
                };
                if !ok {
                    return Err(Error::OutOfRange(format!(
                        "neuron ({channel}, {y}, {x}) in layer {layer} of shape {:?}",
                        shapes[*layer]
                    )));
                }
            }
            ObjectiveTerm::ChannelMean { layer, channel } => {
                check_layer(net, *layer)?;
                match shapes[*layer].as_slice() {
                    &[c, _, _] if channel < &c => {}
                    s => {
                        return Err(Error::OutOfRange(format!(
                            "channel {channel} in layer {layer} of shape {s:?}"
                        )))
                    }
                }
            }
            ObjectiveTerm::LayerL2 { layer } => check_layer(net, *layer)?,
            ObjectiveTerm::ContentLoss { layer, target } => {
                check_layer(net, *layer)?;
                if target.shape()[1..] != shapes[*layer][..] || target.shape()[0] != 1 {
                    return Err(Error::shape(
                        "content target",
                        format!("{:?} vs layer {layer} shape {:?}", target.shape(), shapes[*layer]),
                    ));
                }
            }
            ObjectiveTerm::StyleLoss { signature } => signature.validate(net)?,
            ObjectiveTerm::TotalVariation => {}
            ObjectiveTerm::L2Distance { reference } => {
                let [c, h, w] = net.input_shape();
                if chw("l2 reference", reference.shape())? != (c, h, w) {
                    return Err(Error::shape(
                        "l2 reference",
                        format!("{:?} vs net input {:?}", reference.shape(), [c, h, w]),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Records this term's raw value for a `1 x C x H x W` image.
    fn record<T: Real>(&self, tape: &mut Tape<T>, image: Var, acts: &[Var]) -> Result<Var> {
        match self {
            ObjectiveTerm::ClassProbability { class } => {
                let p = tape.softmax(*acts.last().expect("layers"))?;
                tape.select(p, *class)
            }
            ObjectiveTerm::ClassLogit { class } => tape.select(*acts.last().expect("layers"), *class),
            ObjectiveTerm::Neuron { layer, channel, y, x } => {
                let s = tape.shape(acts[*layer]).to_vec();
                let flat = match s.as_slice() {
                    &[_, _, h, w] => (channel * h + y) * w + x,
                    _ => *channel,
                };
                tape.select(acts[*layer], flat)
            }
            ObjectiveTerm::ChannelMean { layer, channel } => tape.channel_mean(acts[*layer], *channel),
            ObjectiveTerm::LayerL2 { layer } => {
                let sq = tape.square(acts[*layer])?;
                tape.mean(sq)
            }
            ObjectiveTerm::ContentLoss { layer, target } => {
                let t = tape.constant(target.cast());
                let d = tape.sub(acts[*layer], t)?;
                let sq = tape.square(d)?;
                tape.mean(sq)
            }
            ObjectiveTerm::StyleLoss { signature } => {
                let mut total: Option<Var> = None;
                for (l, target, w) in &signature.layers {
                    let g = tape.gram(acts[*l])?;
                    let c = target.channels;
                    let t = tape.constant(Tensor::new(
                        vec![c, c],
                        target.values.iter().map(|&v| T::of(v)).collect(),
                    )?);
                    let d = tape.sub(g, t)?;
                    let sq = tape.square(d)?;
                    let m = tape.mean(sq)?;
                    let term = tape.scale(m, *w)?;
                    total = Some(match total {
                        None => term,
                        Some(acc) => tape.add(acc, term)?,
                    });
                }
                total.ok_or(Error::Empty("style signature"))
            }
            ObjectiveTerm::TotalVariation => tape.total_variation(image),
            ObjectiveTerm::L2Distance { reference } => {
                let r = tape.constant(as_batch(reference)?.cast());
                let d = tape.sub(image, r)?;
                let sq = tape.square(d)?;
                tape.sum(sq)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTerm {
    pub term: ObjectiveTerm,
    pub weight: f64,
    pub direction: Direction,
}

/// `sum sign * weight * term`, always ascended.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeObjective {
    terms: Vec<WeightedTerm>,
}

/// Handles of a recorded objective.
#[derive(Clone, Debug)]
pub struct RecordedObjective {
    pub total: Var,
    /// Raw (unweighted, unsigned) value of each term.
    pub terms: Vec<Var>,
}

impl CompositeObjective {
    pub fn new(terms: Vec<WeightedTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Empty("objective"));
        }
        if let Some(t) = terms.iter().find(|t| !t.weight.is_finite()) {
            return Err(Error::Config(format!("non-finite weight on {}", t.term.name())));
        }
        Ok(Self { terms })
    }

    pub fn single(term: ObjectiveTerm, weight: f64, direction: Direction) -> Result<Self> {
        Self::new(vec![WeightedTerm {
            term,
            weight,
            direction,
        }])
    }

    pub fn terms(&self) -> &[WeightedTerm] {
        &self.terms
    }

    pub fn term_names(&self) -> Vec<&'static str> {
        self.terms.iter().map(|t| t.term.name()).collect()
    }

    pub fn validate(&self, net: &RecognitionNet) -> Result<()> {
        self.terms.iter().try_for_each(|t| t.term.validate(net))
    }

    fn uses_net(&self) -> bool {
        self.terms.iter().any(|t| t.term.uses_net())
    }

    /// Records the objective for a `1 x C x H x W` image already on `tape`.
    pub fn record<T: Real>(&self, tape: &mut Tape<T>, image: Var, net: &RecognitionNet) -> Result<RecordedObjective> {
        let acts = if self.uses_net() {
            let binding = net.bind(tape, false);
            net.forward_on(tape, &binding, image)?
        } else {
            Vec::new()
        };
        let mut total: Option<Var> = None;
        let mut terms = Vec::with_capacity(self.terms.len());
        for wt in &self.terms {
            let raw = wt.term.record(tape, image, &acts)?;
            terms.push(raw);
            let signed = tape.scale(raw, wt.direction.sign() * wt.weight)?;
            total = Some(match total {
                None => signed,
                Some(acc) => tape.add(acc, signed)?,
            });
        }
        Ok(RecordedObjective {
            total: total.expect("non-empty objective"),
            terms,
        })
    }

    /// Value and per-term raw values without gradients.
    pub fn value(&self, image: &Tensor, net: &RecognitionNet) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(as_batch(image)?);
        let rec = self.record(&mut tape, x, net)?;
        let terms = rec.terms.iter().map(|&v| tape.value(v).data()[0] as f64).collect();
        Ok((tape.value(rec.total).data()[0] as f64, terms))
    }
}

/// Objective value and its gradient with respect to the image, from one
/// backward pass.
pub fn evaluate_objective(obj: &CompositeObjective, image: &Tensor, net: &RecognitionNet) -> Result<(f64, Tensor)> {
    let batch = as_batch(image)?;
    let [c, h, w] = net.input_shape();
    if batch.shape()[1..] != [c, h, w] {
        return Err(Error::shape(
            "evaluate_objective",
            format!("image {:?} vs net input {:?}", image.shape(), [c, h, w]),
        ));
    }
    obj.validate(net)?;
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(batch);
    let rec = obj.record(&mut tape, x, net)?;
    tape.backward(rec.total)?;
    let value = tape.value(rec.total).data()[0] as f64;
    let grad = Tensor::new(
        image.shape().to_vec(),
        tape.grad(x).map_or_else(|| vec![0.0; image.numel()], <[f32]>::to_vec),
    )?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests;
